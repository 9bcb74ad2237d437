#include "cli.hpp"

#include "tmlesi/core_data.hpp"
#include "tmlesi/estimators.hpp"
#include "tmlesi/glm.hpp"
#include "tmlesi/interventions.hpp"
#include "tmlesi/msm.hpp"
#include "tmlesi/simulation.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <tuple>
#include <type_traits>

namespace tmlesi::cli {

namespace {

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? sep : "") + parts[i];
  return out;
}

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t");
  if (first == std::string::npos) return {};
  return s.substr(first, s.find_last_not_of(" \t") - first + 1);
}

/// Writes to the file at `path`, or to `fallback` when the path is empty.
template <class F>
void emit(const std::string& path, std::ostream& fallback, F&& write) {
  if (path.empty()) {
    write(fallback);
    return;
  }
  std::ofstream file(path);
  if (!file) throw ParseError("cannot write '" + path + "'");
  write(file);
}

std::vector<std::string> csv_header_columns(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty CSV: header required");
  return split_csv_line(line);
}

std::pair<std::string, std::string> split_contrast(const std::string& text) {
  const auto pos = text.find(" vs ");
  if (pos == std::string::npos)
    throw ParseError("contrast '" + text + "' must look like '<intervention> vs <intervention>'");
  return {trim(text.substr(0, pos)), trim(text.substr(pos + 4))};
}

// Resolved configuration as an INI section that `--config` reads back.
class IniWriter {
 public:
  explicit IniWriter(const std::string& section) { ss_ << std::setprecision(17) << '[' << section << "]\n"; }
  IniWriter& str(const std::string& key, const std::string& v) {
    if (!v.empty()) ss_ << key << "=\"" << v << "\"\n";
    return *this;
  }
  template <class T>
  IniWriter& num(const std::string& key, T v) {
    ss_ << key << '=' << v << '\n';
    return *this;
  }
  template <class T>
  IniWriter& list(const std::string& key, const std::vector<T>& v) {
    if (v.empty()) return *this;
    ss_ << key << "=[";
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) ss_ << ',';
      if constexpr (std::is_same_v<T, std::string>) ss_ << '"' << v[i] << '"';
      else ss_ << v[i];
    }
    ss_ << "]\n";
    return *this;
  }
  std::string text() const { return ss_.str(); }

 private:
  std::ostringstream ss_;
};

std::string to_ini(const EstimateConfig& c) {
  IniWriter w("estimate");
  w.str("data", c.data).str("output", c.output).str("effects-out", c.effects_out);
  w.list("covariates", c.covariates).str("exposure", c.exposure).str("outcome", c.outcome);
  w.str("group", c.group).str("q-formula", c.q_formula).str("g-formula", c.g_formula);
  w.str("kn", c.kn).str("estimator", c.estimator).list("intervention", c.interventions);
  w.list("contrast", c.contrasts).list("bounds", c.bounds);
  w.num("trunc-lo", c.trunc_lo).num("trunc-hi", c.trunc_hi).num("ci-level", c.ci_level);
  w.num("seed", c.seed);
  return w.text();
}

std::string to_ini(const SimulateConfig& c) {
  IniWriter w("simulate");
  w.list("regime", c.regimes).list("n", c.ns).list("beta", c.betas).list("estimand", c.estimands);
  w.num("replicates", c.replicates).num("seed", c.seed).num("threads", c.threads);
  w.num("ci-level", c.ci_level).num("trunc-lo", c.trunc_lo).num("trunc-hi", c.trunc_hi);
  w.str("output", c.output);
  return w.text();
}

std::string to_ini(const MsmConfig& c) {
  IniWriter w("msm");
  w.str("effects", c.effects).str("formula", c.formula).str("weights", c.weights);
  w.str("target", c.target).num("ci-level", c.ci_level).str("output", c.output);
  return w.text();
}

void write_comment_block(std::ostream& o, const std::string& text) {
  std::istringstream lines(text);
  for (std::string line; std::getline(lines, line);) o << "# " << line << '\n';
}

// ---------------------------------------------------------------- estimate

int cmd_estimate(EstimateConfig cfg, std::ostream& out, std::ostream& err) {
  if (cfg.data.empty()) throw ParseError("estimate needs --data");
  if (!cfg.bounds.empty() && cfg.bounds.size() != 2)
    throw ParseError("--bounds takes exactly two values: lower upper");
  if (cfg.covariates.empty()) {
    for (const auto& c : csv_header_columns(cfg.data))
      if (c != cfg.exposure && c != cfg.outcome && c != cfg.group) cfg.covariates.push_back(c);
    if (cfg.covariates.empty()) throw ParseError("no covariate columns in '" + cfg.data + "'");
  }
  const std::string rhs = join(cfg.covariates, " + ");
  if (cfg.q_formula.empty()) cfg.q_formula = cfg.outcome + " ~ 1 + " + rhs + " + " + cfg.exposure;
  if (cfg.g_formula.empty()) cfg.g_formula = cfg.exposure + " ~ 1 + " + rhs;

  const std::string resolved = to_ini(cfg);
  const ModelSpec q_spec = parse_formula(cfg.q_formula, ModelRole::Outcome);
  const ModelSpec g_spec = parse_formula(cfg.g_formula, ModelRole::Propensity);
  const KnSpec kn = parse_kn(cfg.kn);
  const Estimator estimator = parse_estimator(cfg.estimator);
  std::vector<std::pair<std::string, InterventionSpec>> arms;
  for (const auto& s : cfg.interventions) arms.emplace_back(s, parse_intervention(s));
  std::vector<std::tuple<std::string, InterventionSpec, InterventionSpec>> contrasts;
  for (const auto& s : cfg.contrasts) {
    const auto [a, b] = split_contrast(s);
    contrasts.emplace_back(a + " vs " + b, parse_intervention(a), parse_intervention(b));
  }

  EstimatorOptions options;
  options.trunc_lo = cfg.trunc_lo;
  options.trunc_hi = cfg.trunc_hi;
  options.ci_level = cfg.ci_level;
  if (!cfg.bounds.empty()) options.outcome_bounds = OutcomeScale{cfg.bounds[0], cfg.bounds[1]};

  CsvSchema schema{cfg.covariates, cfg.exposure, cfg.outcome, std::nullopt};
  if (!cfg.group.empty()) schema.group = cfg.group;
  const LoadedSamples loaded = load_samples(cfg.data, schema);

  nlohmann::json report;
  report["config"] = resolved;
  report["seed"] = cfg.seed;
  report["groups"] = nlohmann::json::array();
  report["errors"] = nlohmann::json::array();
  std::ostringstream effects;
  effects << std::setprecision(17) << "group_id,target,psi_hat,variance,n,a_bar,k\n";
  auto effect_row = [&](const std::string& group, const std::string& target, double psi, double se,
                        const ExposureSummary& s) {
    effects << group << ',' << target << ',' << psi << ',' << se * se << ',' << s.n << ','
            << s.a_bar << ',' << s.k_value << '\n';
  };

  for (const auto& [group, reason] : loaded.rejected)
    report["errors"].push_back({{"group_id", group}, {"error", reason}});

  for (const auto& sample : loaded.samples) {
    const std::string gid = sample.group_id.value_or("all");
    // A bad model is the same for every group: let it escape as exit 2.
    check_spec(q_spec, sample);
    check_spec(g_spec, sample);
    try {
      const NuisanceFits fits = fit_nuisance(sample, kn, q_spec, g_spec, options);
      nlohmann::json g;
      g["group_id"] = gid;
      g["n"] = fits.summary.n;
      g["a_bar"] = fits.summary.a_bar;
      g["k_value"] = fits.summary.k_value;
      g["outcome_scale"] = {fits.data.scale.lower, fits.data.scale.upper};
      g["q_model"] = q_spec.formula();
      g["g_model"] = g_spec.formula();

      const ContrastResult direct = direct_effect(fits, options, estimator);
      g["direct_effect"] = to_json(direct);
      effect_row(gid, "direct", direct.estimate, direct.se, fits.summary);

      g["interventions"] = nlohmann::json::array();
      for (const auto& [label, spec] : arms) {
        const EstimateResult r = estimate_arm(fits, spec, estimator, options);
        auto j = to_json(r);
        j["label"] = label;
        g["interventions"].push_back(j);
        effect_row(gid, label, r.psi, r.se_conditional, fits.summary);
      }
      g["contrasts"] = nlohmann::json::array();
      for (const auto& [label, a, b] : contrasts) {
        const ContrastResult c = overall_effect_contrast(fits, a, b, options, estimator);
        auto j = to_json(c);
        j["label"] = label;
        g["contrasts"].push_back(j);
        effect_row(gid, label, c.estimate, c.se, fits.summary);
      }
      report["groups"].push_back(g);
    } catch (const ParseError&) {
      throw;
    } catch (const std::exception& e) {
      report["errors"].push_back({{"group_id", gid}, {"error", e.what()}});
      err << "group " << gid << ": " << e.what() << '\n';
    }
  }

  emit(cfg.output, out, [&](std::ostream& o) { o << report.dump(2) << '\n'; });
  if (!cfg.effects_out.empty()) {
    emit(cfg.effects_out, out, [&](std::ostream& o) {
      write_comment_block(o, resolved);
      o << effects.str();
    });
  }
  return report["errors"].empty() ? kOk : kEstimationFailure;
}

// ---------------------------------------------------------------- simulate

int cmd_simulate(SimulateConfig cfg, std::ostream& out, std::ostream& err) {
  if (cfg.table1) {
    cfg.regimes = {"correct_both", "mis_q", "mis_g"};
    cfg.ns = {50, 500, 5000};
    cfg.betas = {0.0, 1.0, 10.0};
    if (cfg.estimands.empty()) cfg.estimands = {"direct", "oers"};
  }
  std::vector<sim::Regime> regimes;
  for (const auto& r : cfg.regimes) regimes.push_back(sim::parse_regime(r));
  std::vector<sim::Estimand> estimands;
  for (const auto& e : cfg.estimands) estimands.push_back(sim::parse_estimand(e));
  if (regimes.empty() || estimands.empty() || cfg.ns.empty() || cfg.betas.empty())
    throw ParseError("simulate needs at least one regime, n, beta and estimand");
  std::sort(regimes.begin(), regimes.end());
  regimes.erase(std::unique(regimes.begin(), regimes.end()), regimes.end());
  std::sort(estimands.begin(), estimands.end());
  estimands.erase(std::unique(estimands.begin(), estimands.end()), estimands.end());
  std::sort(cfg.ns.begin(), cfg.ns.end());
  cfg.ns.erase(std::unique(cfg.ns.begin(), cfg.ns.end()), cfg.ns.end());
  std::sort(cfg.betas.begin(), cfg.betas.end());
  cfg.betas.erase(std::unique(cfg.betas.begin(), cfg.betas.end()), cfg.betas.end());
  for (const long n : cfg.ns)
    if (n < 2) throw ParseError("simulation sample sizes must be >= 2");
  if (cfg.replicates < 1) throw ParseError("replicates must be >= 1");
  cfg.table1 = false;  // already expanded into the lists below
  const std::string resolved = to_ini(cfg);

  std::vector<sim::SimCellResult> rows;
  int status = kOk;
  for (const auto regime : regimes) {
    for (const long n : cfg.ns) {
      for (const double beta : cfg.betas) {
        sim::SimConfig sc;
        sc.n = n;
        sc.beta = beta;
        sc.regime = regime;
        sc.replicates = cfg.replicates;
        sc.seed = cfg.seed;
        sc.ci_level = cfg.ci_level;
        sc.options.trunc_lo = cfg.trunc_lo;
        sc.options.trunc_hi = cfg.trunc_hi;
        sc.threads = cfg.threads;
        try {
          for (auto& r : sim::run_cells(sc, estimands)) rows.push_back(r);
        } catch (const EstimationError& e) {
          err << "cell " << sim::to_string(regime) << " n=" << n << " beta=" << beta << ": "
              << e.what() << '\n';
          status = kEstimationFailure;
        }
      }
    }
  }
  emit(cfg.output, out, [&](std::ostream& o) {
    write_comment_block(o, resolved);
    o << sim::csv_header() << '\n';
    for (const auto& r : rows) o << sim::to_csv_row(r) << '\n';
  });
  return status;
}

// ---------------------------------------------------------------- msm

int cmd_msm(const MsmConfig& cfg, std::ostream& out) {
  const std::string resolved = to_ini(cfg);
  if (cfg.effects.empty()) throw ParseError("msm needs --effects");
  const auto formula = parse_msm_formula(cfg.formula);
  const auto weighting = parse_weighting(cfg.weights);
  const auto effects = load_group_effects(cfg.effects, cfg.target);
  MsmFit fit;
  try {
    fit = fit_msm(effects, formula, weighting);
  } catch (const EstimationError& e) {
    // An unidentifiable working model is a property of the request, not of
    // the data's sampling noise.
    throw ParseError(e.what());
  }
  auto j = to_json(fit, cfg.ci_level);
  j["config"] = resolved;
  j["groups"] = effects.size();
  j["formula"] = cfg.formula;
  emit(cfg.output, out, [&](std::ostream& o) { o << j.dump(2) << '\n'; });
  return kOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Targeted estimation of direct and overall effects under complete interference"};
  app.set_config("--config", "", "INI file with a section per command; flags override it");
  app.require_subcommand(1);
  app.fallthrough();

  EstimateConfig est;
  auto* e = app.add_subcommand("estimate", "TMLE/A-IPW estimates per group");
  e->add_option("--data", est.data, "input CSV")->required();
  e->add_option("--output", est.output, "JSON report path (default stdout)");
  e->add_option("--effects-out", est.effects_out, "per-group effects CSV for `msm`");
  e->add_option("--covariates", est.covariates, "covariate columns")->delimiter(',');
  e->add_option("--exposure", est.exposure, "binary exposure column")->capture_default_str();
  e->add_option("--outcome", est.outcome, "outcome column")->capture_default_str();
  e->add_option("--group", est.group, "group column (optional)");
  e->add_option("--q-formula", est.q_formula, "outcome model, e.g. 'y ~ 1 + w + a + w:a [logit]'");
  e->add_option("--g-formula", est.g_formula, "propensity model, e.g. 'a ~ 1 + w [logit]'");
  e->add_option("--kn", est.kn, "identity | count | affine:slope=s,intercept=c")->capture_default_str();
  e->add_option("--estimator", est.estimator, "tmle | aipw")->capture_default_str();
  e->add_option("--intervention", est.interventions, "single-arm intervention (repeatable)");
  e->add_option("--contrast", est.contrasts, "'<intervention> vs <intervention>' (repeatable)");
  e->add_option("--bounds", est.bounds, "outcome bounds: lower upper (default: sample min/max)")
      ->expected(2);
  e->add_option("--trunc-lo", est.trunc_lo, "lower propensity truncation")->capture_default_str();
  e->add_option("--trunc-hi", est.trunc_hi, "upper propensity truncation")->capture_default_str();
  e->add_option("--ci-level", est.ci_level, "confidence level")->capture_default_str();
  e->add_option("--seed", est.seed, "recorded in the output header")->capture_default_str();

  SimulateConfig simc;
  auto* s = app.add_subcommand("simulate", "Monte Carlo study of bias, MSE and coverage");
  s->add_option("--regime", simc.regimes, "correct_both | mis_q | mis_g")->delimiter(',')->capture_default_str();
  s->add_option("--n", simc.ns, "sample sizes")->delimiter(',')->capture_default_str();
  s->add_option("--beta", simc.betas, "interference strengths")->delimiter(',')->capture_default_str();
  s->add_option("--estimand", simc.estimands, "direct | oers | complete_rand")
      ->delimiter(',')
      ->capture_default_str();
  s->add_flag("--table1", simc.table1, "full 3 regimes x n in {50,500,5000} x beta in {0,1,10} grid");
  s->add_option("--replicates", simc.replicates, "replicates per cell")->capture_default_str();
  s->add_option("--seed", simc.seed, "master seed")->capture_default_str();
  s->add_option("--threads", simc.threads, "OpenMP threads (0: runtime default)")
      ->envname("TMLESI_THREADS")
      ->capture_default_str();
  s->add_option("--ci-level", simc.ci_level, "confidence level")->capture_default_str();
  s->add_option("--trunc-lo", simc.trunc_lo, "lower propensity truncation")->capture_default_str();
  s->add_option("--trunc-hi", simc.trunc_hi, "upper propensity truncation")->capture_default_str();
  s->add_option("--output", simc.output, "CSV path (default stdout)");

  MsmConfig msmc;
  auto* m = app.add_subcommand("msm", "project group effects on group-level modifiers");
  m->add_option("--effects", msmc.effects, "effects CSV (group_id, psi_hat, variance, modifiers)")
      ->required();
  m->add_option("--formula", msmc.formula, "working model, e.g. '1 + k + G + G:k'")->capture_default_str();
  m->add_option("--weights", msmc.weights, "invvar | uniform")
      ->check(CLI::IsMember({"invvar", "uniform"}))
      ->capture_default_str();
  m->add_option("--target", msmc.target, "keep rows whose `target` column matches");
  m->add_option("--ci-level", msmc.ci_level, "confidence level")->capture_default_str();
  m->add_option("--output", msmc.output, "JSON path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& ex) {
    err << "error: " << ex.what() << '\n';
    return kConfigError;
  }

  try {
    if (e->parsed()) return cmd_estimate(est, out, err);
    if (s->parsed()) return cmd_simulate(simc, out, err);
    if (m->parsed()) return cmd_msm(msmc, out);
  } catch (const ParseError& ex) {
    err << "error: " << ex.what() << '\n';
    return kConfigError;
  } catch (const EstimationError& ex) {
    err << "estimation failed: " << ex.what() << '\n';
    return kEstimationFailure;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << '\n';
    return kEstimationFailure;
  }
  return kConfigError;
}

}  // namespace tmlesi::cli
