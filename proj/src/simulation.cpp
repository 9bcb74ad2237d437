#include "tmlesi/simulation.hpp"

#include "tmlesi/interventions.hpp"
#include "tmlesi/normal.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace tmlesi::sim {

namespace {

constexpr int kMaxRedraws = 1000;

double top_s_mean(const Sample& sample) {
  std::vector<double> w(sample.covariates.col(0).data(),
                        sample.covariates.col(0).data() + sample.size());
  Eigen::Index s_n = 0;
  for (Eigen::Index i = 0; i < sample.size(); ++i) s_n += sample.exposure[i] == 1.0 ? 1 : 0;
  std::sort(w.begin(), w.end(), std::greater<>());
  double total = 0.0;
  for (Eigen::Index k = 0; k < s_n; ++k) total += w[static_cast<std::size_t>(k)];
  return total / static_cast<double>(sample.size());
}

double a_bar_of(const Sample& sample) { return sample.exposure.mean(); }

}  // namespace

std::string to_string(Regime r) {
  switch (r) {
    case Regime::CorrectBoth: return "correct_both";
    case Regime::MisQ: return "mis_q";
    case Regime::MisG: return "mis_g";
  }
  return "?";
}

std::string to_string(Estimand e) {
  switch (e) {
    case Estimand::DirectEffect: return "direct";
    case Estimand::OersOverall: return "oers";
    case Estimand::CompleteRandOverall: return "complete_rand";
  }
  return "?";
}

Regime parse_regime(const std::string& text) {
  if (text == "correct_both") return Regime::CorrectBoth;
  if (text == "mis_q") return Regime::MisQ;
  if (text == "mis_g") return Regime::MisG;
  throw ParseError("unknown regime '" + text + "' (expected correct_both, mis_q or mis_g)");
}

Estimand parse_estimand(const std::string& text) {
  if (text == "direct") return Estimand::DirectEffect;
  if (text == "oers") return Estimand::OersOverall;
  if (text == "complete_rand") return Estimand::CompleteRandOverall;
  throw ParseError("unknown estimand '" + text + "' (expected direct, oers or complete_rand)");
}

Stream::Stream(std::uint64_t seed, std::uint64_t replicate, std::uint64_t attempt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(replicate),
                    static_cast<std::uint32_t>(replicate >> 32),
                    static_cast<std::uint32_t>(attempt), static_cast<std::uint32_t>(attempt >> 32)};
  engine_.seed(seq);
}

double Stream::uniform() {
  return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
}

double Stream::normal() { return normal_quantile(uniform()); }

GeneratedSample generate_sample(Eigen::Index n, double beta, Stream& stream) {
  if (n < 2) throw ParseError("simulation needs n >= 2");
  Eigen::MatrixXd w(n, 1);
  Eigen::VectorXd a(n), y0(n), y(n);
  for (Eigen::Index i = 0; i < n; ++i) w(i, 0) = stream.normal();
  for (Eigen::Index i = 0; i < n; ++i) a[i] = stream.uniform() < expit(w(i, 0)) ? 1.0 : 0.0;
  for (Eigen::Index i = 0; i < n; ++i) y0[i] = stream.normal();
  const double a_bar = a.mean();
  for (Eigen::Index i = 0; i < n; ++i) y[i] = y0[i] + a[i] * w(i, 0) * (1.0 - beta * a_bar);

  GeneratedSample out;
  const double s_n = a.sum();
  out.degenerate = s_n == 0.0 || s_n == static_cast<double>(n);
  out.sample.covariate_names = {"w"};
  out.sample.covariates = std::move(w);
  out.sample.exposure = std::move(a);
  out.sample.outcome = std::move(y);
  out.latent_y0 = std::move(y0);
  return out;
}

double true_direct_effect(const Sample& sample, double beta) {
  return (1.0 - beta * a_bar_of(sample)) * sample.covariates.col(0).mean();
}

double true_oers_overall(const Sample& sample, double beta) {
  return (1.0 - beta * a_bar_of(sample)) * top_s_mean(sample);
}

double true_complete_rand_overall(const Sample& sample, double beta) {
  const double a_bar = a_bar_of(sample);
  return (1.0 - beta * a_bar) * a_bar * sample.covariates.col(0).mean();
}

RegimeSpecs regime_specs(Regime regime) {
  const std::string q = regime == Regime::MisQ ? "y ~ 1 + w + a [logit]"
                                               : "y ~ 1 + w + a + w:a [logit]";
  const std::string g = regime == Regime::MisG ? "a ~ 1 + w [probit]" : "a ~ 1 + w [logit]";
  return {parse_formula(q, ModelRole::Outcome), parse_formula(g, ModelRole::Propensity)};
}

std::vector<ReplicateRecord> run_replicate(const SimConfig& config,
                                           const std::vector<Estimand>& estimands, int index,
                                           int* redraws) {
  GeneratedSample gen;
  int attempt = 0;
  for (;; ++attempt) {
    if (attempt > kMaxRedraws) throw EstimationError("too many degenerate draws");
    Stream stream(config.seed, static_cast<std::uint64_t>(index),
                  static_cast<std::uint64_t>(attempt));
    gen = generate_sample(config.n, config.beta, stream);
    if (!gen.degenerate) break;
  }
  if (redraws != nullptr) *redraws = attempt;

  std::vector<ReplicateRecord> records(estimands.size());
  try {
    const auto specs = regime_specs(config.regime);
    EstimatorOptions options = config.options;
    options.ci_level = config.ci_level;
    const auto fits = fit_nuisance(gen.sample, KnIdentity{}, specs.q_spec, specs.g_spec, options);
    for (std::size_t k = 0; k < estimands.size(); ++k) {
      auto& rec = records[k];
      double lo = 0.0, hi = 0.0;
      switch (estimands[k]) {
        case Estimand::DirectEffect: {
          const auto c = direct_effect(fits, options);
          rec.estimate = c.estimate;
          std::tie(lo, hi) = c.ci;
          rec.truth = true_direct_effect(gen.sample, config.beta);
          break;
        }
        case Estimand::OersOverall: {
          const auto r = estimate_arm(fits, RankTopS{"w", true}, Estimator::Tmle, options);
          rec.estimate = r.psi;
          std::tie(lo, hi) = r.ci;
          rec.truth = true_oers_overall(gen.sample, config.beta);
          break;
        }
        case Estimand::CompleteRandOverall: {
          const auto r = estimate_arm(fits, CompleteRandomization{}, Estimator::Tmle, options);
          rec.estimate = r.psi;
          std::tie(lo, hi) = r.ci;
          rec.truth = true_complete_rand_overall(gen.sample, config.beta);
          break;
        }
      }
      rec.covered = lo <= rec.truth && rec.truth <= hi;
      if (!std::isfinite(rec.estimate) || !std::isfinite(lo) || !std::isfinite(hi)) rec.failed = true;
    }
  } catch (const std::exception&) {
    for (auto& rec : records) rec.failed = true;
  }
  return records;
}

SimCellResult summarize(const SimConfig& config, Estimand estimand,
                        const std::vector<ReplicateRecord>& records, int redraws) {
  SimCellResult r;
  r.regime = config.regime;
  r.n = config.n;
  r.beta = config.beta;
  r.estimand = estimand;
  r.replicates = static_cast<int>(records.size());
  r.degenerate_redraws = redraws;

  double sum_err = 0.0, sum_sq = 0.0, sum_truth = 0.0, sum_truth_sq = 0.0;
  int hits = 0, ok = 0;
  for (const auto& rec : records) {
    if (rec.failed) {
      ++r.replicate_failures;
      continue;
    }
    ++ok;
    const double e = rec.estimate - rec.truth;
    sum_err += e;
    sum_sq += e * e;
    sum_truth += rec.truth;
    sum_truth_sq += rec.truth * rec.truth;
    hits += rec.covered ? 1 : 0;
  }
  if (static_cast<double>(r.replicate_failures) > 0.01 * static_cast<double>(records.size()))
    throw EstimationError(std::to_string(r.replicate_failures) + " of " +
                          std::to_string(records.size()) + " replicates failed (cap 1%)");
  if (ok == 0) throw EstimationError("no successful replicates");
  const double m = static_cast<double>(ok);
  r.bias = sum_err / m;
  r.mse = sum_sq / m;
  r.coverage = static_cast<double>(hits) / m;
  r.mc_se_of_coverage = std::sqrt(r.coverage * (1.0 - r.coverage) / m);
  r.truth_mean = sum_truth / m;

  double var_truth = 0.0, var_err = 0.0;
  for (const auto& rec : records) {
    if (rec.failed) continue;
    var_truth += (rec.truth - r.truth_mean) * (rec.truth - r.truth_mean);
    const double e = rec.estimate - rec.truth - r.bias;
    var_err += e * e;
  }
  r.truth_sd = ok > 1 ? std::sqrt(var_truth / (m - 1.0)) : 0.0;
  r.error_variance = var_err / m;
  return r;
}

namespace {

std::vector<SimCellResult> reduce(const SimConfig& config, const std::vector<Estimand>& estimands,
                                  const std::vector<std::vector<ReplicateRecord>>& all,
                                  const std::vector<int>& redraws) {
  int total_redraws = 0;
  for (const int d : redraws) total_redraws += d;
  std::vector<SimCellResult> out;
  for (std::size_t k = 0; k < estimands.size(); ++k) {
    std::vector<ReplicateRecord> column;
    column.reserve(all.size());
    for (const auto& rep : all) column.push_back(rep[k]);
    out.push_back(summarize(config, estimands[k], column, total_redraws));
  }
  return out;
}

void check_config(const SimConfig& config) {
  if (config.replicates < 1) throw ParseError("replicates must be >= 1");
  if (config.n < 2) throw ParseError("n must be >= 2");
}

}  // namespace

std::vector<SimCellResult> run_cells(const SimConfig& config, const std::vector<Estimand>& estimands) {
  check_config(config);
  const int reps = config.replicates;
  std::vector<std::vector<ReplicateRecord>> all(static_cast<std::size_t>(reps));
  std::vector<int> redraws(static_cast<std::size_t>(reps), 0);
#ifdef _OPENMP
  const int threads = config.threads > 0 ? config.threads : omp_get_max_threads();
#pragma omp parallel for schedule(dynamic, 8) num_threads(threads)
#endif
  for (int r = 0; r < reps; ++r) {
    const auto idx = static_cast<std::size_t>(r);
    all[idx] = run_replicate(config, estimands, r, &redraws[idx]);
  }
  return reduce(config, estimands, all, redraws);
}

std::vector<SimCellResult> run_cells_serial(const SimConfig& config,
                                            const std::vector<Estimand>& estimands) {
  check_config(config);
  const int reps = config.replicates;
  std::vector<std::vector<ReplicateRecord>> all(static_cast<std::size_t>(reps));
  std::vector<int> redraws(static_cast<std::size_t>(reps), 0);
  for (int r = 0; r < reps; ++r) {
    const auto idx = static_cast<std::size_t>(r);
    all[idx] = run_replicate(config, estimands, r, &redraws[idx]);
  }
  return reduce(config, estimands, all, redraws);
}

SimCellResult run_cell(const SimConfig& config) { return run_cells(config, {config.estimand}).front(); }

SimCellResult run_cell_serial(const SimConfig& config) {
  return run_cells_serial(config, {config.estimand}).front();
}

std::string csv_header() {
  return "regime,n,beta,estimand,replicates,bias,mse,coverage,mc_se,truth_mean,truth_sd,failures";
}

std::string to_csv_row(const SimCellResult& r) {
  std::ostringstream ss;
  ss << std::setprecision(8) << to_string(r.regime) << ',' << r.n << ',' << r.beta << ','
     << to_string(r.estimand) << ',' << r.replicates << ',' << r.bias << ',' << r.mse << ','
     << r.coverage << ',' << r.mc_se_of_coverage << ',' << r.truth_mean << ',' << r.truth_sd
     << ',' << r.replicate_failures;
  return ss.str();
}

}  // namespace tmlesi::sim
