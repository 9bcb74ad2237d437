#include "tmlesi/estimators.hpp"
#include "tmlesi/normal.hpp"

#include "support.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

using namespace tmlesi;

namespace {

const ModelSpec kQ = parse_formula("y ~ 1 + w + a + w:a [logit]", ModelRole::Outcome);
const ModelSpec kG = parse_formula("a ~ 1 + w [logit]", ModelRole::Propensity);

std::vector<InterventionSpec> all_interventions() {
  return {AllTreat{}, AllControl{}, CompleteRandomization{}, RankTopS{"w", true},
          RankTopS{"w", false}, Bernoulli{0.3}};
}

// Score of the logistic submodel at eps, written out directly.
double submodel_score(const Eigen::VectorXd& q, const Eigen::VectorXd& h, const Eigen::VectorXd& y,
                      double eps) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i)
    s += h[i] * (y[i] - 1.0 / (1.0 + std::exp(-(std::log(q[i] / (1.0 - q[i])) + eps * h[i]))));
  return s;
}

// Root of the (decreasing) score by a coarse grid followed by bisection.
double epsilon_by_bisection(const Eigen::VectorXd& q, const Eigen::VectorXd& h,
                            const Eigen::VectorXd& y) {
  double lo = -50.0, hi = 50.0;
  for (double e = -50.0; e <= 50.0; e += 0.5) {
    if (submodel_score(q, h, y, e) > 0.0) lo = e;
    else {
      hi = e;
      break;
    }
  }
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (submodel_score(q, h, y, mid) > 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

TEST_CASE("fluctuation solves the score equation and matches bisection") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.02, 0.98), hu(0.0, 3.0);
  for (int rep = 0; rep < 50; ++rep) {
    const int n = 30 + rep;
    Eigen::VectorXd q(n), h(n), y(n);
    for (int i = 0; i < n; ++i) {
      q[i] = u(rng);
      h[i] = rep % 2 ? hu(rng) : hu(rng) - 1.5;
      y[i] = u(rng) < 0.5 ? u(rng) : (u(rng) < 0.5 ? 0.0 : 1.0);
    }
    const auto fl = fluctuate(q, h, y);
    const double score = (h.array() * (y - fl.q_star).array()).sum();
    CHECK(std::abs(score) <= 1e-8);
    CHECK(fl.epsilon == doctest::Approx(epsilon_by_bisection(q, h, y)).epsilon(1e-9));
  }
}

TEST_CASE("zero clever covariate leaves the fit unchanged") {
  Eigen::VectorXd q = Eigen::VectorXd::Constant(5, 0.3), h = Eigen::VectorXd::Zero(5);
  Eigen::VectorXd y = Eigen::VectorXd::LinSpaced(5, 0.0, 1.0);
  const auto fl = fluctuate(q, h, y);
  CHECK(fl.epsilon == 0.0);
  CHECK(fl.q_star == q);
  CHECK_THROWS_AS(fluctuate(Eigen::VectorXd::Zero(5), h, y), EstimationError);
}

TEST_CASE("efficient influence curve equation holds on every TMLE run") {
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 40; ++rep) {
    const Sample s = testsupport::random_sample(rng, 40 + 10 * rep);
    const auto fits = fit_nuisance(s, KnIdentity{}, kQ, kG);
    for (const auto& spec : all_interventions()) {
      const auto r = estimate_arm(fits, spec, Estimator::Tmle, {});
      CHECK(std::abs(r.influence.sum()) <= 1e-8);
    }
  }
}

TEST_CASE("TMLE stays within the outcome bounds on randomized inputs") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> size(5, 80), which(0, 5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int ok = 0, attempts = 0;
  const auto specs = all_interventions();
  while (ok < 1000 && attempts < 5000) {
    ++attempts;
    const int n = size(rng);
    Eigen::MatrixXd w(n, 1);
    Eigen::VectorXd a(n), y(n);
    const double spread = std::exp(6.0 * u(rng) - 3.0), shift = 20.0 * u(rng) - 10.0;
    std::normal_distribution<double> z;
    for (int i = 0; i < n; ++i) {
      w(i, 0) = z(rng) * (1.0 + 2.0 * u(rng));
      a[i] = u(rng) < expit(1.5 * w(i, 0)) ? 1.0 : 0.0;
      y[i] = shift + spread * (u(rng) < 0.2 ? std::pow(z(rng), 3) : a[i] * w(i, 0) + z(rng));
    }
    try {
      const Sample s = make_sample({"w"}, w, a, y);
      const auto r = tmle(s, KnIdentity{}, specs[static_cast<std::size_t>(which(rng))], kQ, kG);
      CHECK(r.psi_scaled >= 0.0);
      CHECK(r.psi_scaled <= 1.0);
      CHECK(r.psi >= y.minCoeff() - 1e-12 * std::abs(y.minCoeff()));
      CHECK(r.psi <= y.maxCoeff() + 1e-12 * std::abs(y.maxCoeff()));
      CHECK(r.within_bounds);
      ++ok;
    } catch (const EstimationError&) {
      // degenerate exposure or separation at tiny n: not a TMLE input
    }
  }
  CHECK(ok == 1000);
}

TEST_CASE("plug-in equals brute-force enumeration on small discrete samples") {
  // Saturated models on binary W: Q is the (W, A) cell mean and the clever
  // covariate is constant within cells, so the fluctuation is trivial and the
  // estimate must equal the enumerated plug-in.
  int checked = 0;
  for (int n = 4; n <= 6; ++n) {
    for (unsigned wm = 0; wm < (1u << n); ++wm) {
      for (unsigned am = 0; am < (1u << n); ++am) {
        int cell[2][2] = {{0, 0}, {0, 0}};
        for (int i = 0; i < n; ++i) ++cell[(wm >> i) & 1][(am >> i) & 1];
        if (!cell[0][0] || !cell[0][1] || !cell[1][0] || !cell[1][1]) continue;
        Eigen::MatrixXd w(n, 1);
        Eigen::VectorXd a(n), y(n);
        for (int i = 0; i < n; ++i) {
          w(i, 0) = (wm >> i) & 1;
          a[i] = (am >> i) & 1;
          y[i] = std::sin(1.0 + i * 1.7 + wm * 0.3) + 0.5 * a[i];
        }
        const Sample s = make_sample({"w"}, w, a, y);
        EstimatorOptions opt;
        opt.outcome_bounds = OutcomeScale{-3.0, 3.0};
        const auto fits = fit_nuisance(s, KnIdentity{}, kQ, kG, opt);

        double qbar[2][2] = {{0, 0}, {0, 0}};
        for (int i = 0; i < n; ++i)
          qbar[(wm >> i) & 1][(am >> i) & 1] += opt.outcome_bounds->scale(y[i]);
        for (int c = 0; c < 4; ++c) qbar[c / 2][c % 2] /= cell[c / 2][c % 2];
        const int s_n = __builtin_popcount(am);

        // Complete randomization: average over every vector with s_n exposed.
        double cr = 0.0, count = 0.0;
        // Bernoulli(p): weight every vector by p^k (1-p)^(n-k).
        const double p = 0.3;
        double bern = 0.0;
        for (unsigned v = 0; v < (1u << n); ++v) {
          double mean = 0.0;
          for (int i = 0; i < n; ++i) mean += qbar[(wm >> i) & 1][(v >> i) & 1];
          mean /= n;
          const int k = __builtin_popcount(v);
          bern += std::pow(p, k) * std::pow(1.0 - p, n - k) * mean;
          if (k == s_n) {
            cr += mean;
            count += 1.0;
          }
        }
        cr /= count;
        double treat = 0.0, control = 0.0;
        for (int i = 0; i < n; ++i) {
          treat += qbar[(wm >> i) & 1][1] / n;
          control += qbar[(wm >> i) & 1][0] / n;
        }

        for (auto est : {Estimator::Tmle, Estimator::Aipw}) {
          CHECK(std::abs(estimate_arm(fits, CompleteRandomization{}, est, opt).psi_scaled - cr) < 1e-12);
          CHECK(std::abs(estimate_arm(fits, Bernoulli{p}, est, opt).psi_scaled - bern) < 1e-12);
          CHECK(std::abs(estimate_arm(fits, AllTreat{}, est, opt).psi_scaled - treat) < 1e-12);
          CHECK(std::abs(estimate_arm(fits, AllControl{}, est, opt).psi_scaled - control) < 1e-12);
        }
        ++checked;
      }
    }
  }
  CHECK(checked > 1000);
}

TEST_CASE("A-IPW matches a literal transcription and reduces to IPW when Q is zero") {
  std::mt19937_64 rng(5);
  const Sample s = testsupport::random_sample(rng, 120);
  auto fits = fit_nuisance(s, KnIdentity{}, kQ, kG);
  const auto& ys = fits.data.sample.outcome;
  for (const auto& spec : all_interventions()) {
    const auto m = marginalize(spec, s, fits.summary);
    double literal = 0.0;
    for (Eigen::Index i = 0; i < s.size(); ++i) {
      const double g1 = std::clamp(fits.g_treat[i], 0.005, 0.995);
      const double g0 = std::clamp(1.0 - fits.g_treat[i], 0.005, 0.995);
      const double star = s.exposure[i] == 1.0 ? m.probs_treat[i] : 1.0 - m.probs_treat[i];
      const double g = s.exposure[i] == 1.0 ? g1 : g0;
      literal += star / g * (ys[i] - fits.q_observed[i]) + fits.q_treat[i] * m.probs_treat[i] +
                 fits.q_control[i] * (1.0 - m.probs_treat[i]);
    }
    literal /= static_cast<double>(s.size());
    CHECK(estimate_arm(fits, spec, Estimator::Aipw, {}).psi_scaled ==
          doctest::Approx(literal).epsilon(1e-13));
  }

  fits.q_observed.setZero();
  fits.q_treat.setZero();
  fits.q_control.setZero();
  for (const auto& spec : all_interventions()) {
    const auto m = marginalize(spec, s, fits.summary);
    const auto h = clever_covariate(m, fits.g_treat, s.exposure, 0.005, 0.995);
    const double ipw = (h.observed.array() * ys.array()).mean();
    CHECK(estimate_arm(fits, spec, Estimator::Aipw, {}).psi_scaled ==
          doctest::Approx(ipw).epsilon(1e-13));
  }
}

TEST_CASE("estimates are invariant to row order") {
  std::mt19937_64 rng(17);
  const Sample s = testsupport::random_sample(rng, 200);
  std::vector<Eigen::Index> perm(200);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  const Sample p = permute_rows(s, perm);
  for (auto est : {Estimator::Tmle, Estimator::Aipw}) {
    for (const auto& spec : all_interventions()) {
      const auto r1 = estimate_arm(fit_nuisance(s, KnIdentity{}, kQ, kG), spec, est, {});
      const auto r2 = estimate_arm(fit_nuisance(p, KnIdentity{}, kQ, kG), spec, est, {});
      CHECK(std::abs(r1.psi - r2.psi) <= 1e-10);
      CHECK(std::abs(r1.se_conditional - r2.se_conditional) <= 1e-10);
    }
    const auto d1 = direct_effect(s, KnIdentity{}, kQ, kG, {}, est);
    const auto d2 = direct_effect(p, KnIdentity{}, kQ, kG, {}, est);
    CHECK(std::abs(d1.estimate - d2.estimate) <= 1e-10);
    CHECK(std::abs(d1.se - d2.se) <= 1e-10);
  }
}

TEST_CASE("variances and intervals") {
  std::mt19937_64 rng(23);
  const Sample s = testsupport::random_sample(rng, 150);
  const auto fits = fit_nuisance(s, KnIdentity{}, kQ, kG);
  const double width = fits.data.scale.width();

  const auto r = estimate_arm(fits, AllTreat{}, Estimator::Tmle, {});
  const double n = 150.0;
  const double var_y = r.influence.squaredNorm() / n * width * width;
  CHECK(r.se_conditional == doctest::Approx(std::sqrt(var_y / n)).epsilon(1e-13));
  REQUIRE(r.se_population.has_value());
  double var_w = 0.0;
  for (Eigen::Index i = 0; i < r.plugin_terms.size(); ++i)
    var_w += std::pow(r.plugin_terms[i] - r.psi_scaled, 2);
  var_w = var_w / n * width * width;
  CHECK(*r.se_population == doctest::Approx(std::sqrt((var_y + var_w) / n)).epsilon(1e-13));
  const double half = (r.ci.second - r.ci.first) / 2.0;
  CHECK(half / r.se_conditional == doctest::Approx(1.959963984540054).epsilon(1e-12));
  CHECK((r.ci.first + r.ci.second) / 2.0 == doctest::Approx(r.psi).epsilon(1e-14));

  // Population variance is refused for sample-dependent interventions.
  for (const InterventionSpec spec : {InterventionSpec{CompleteRandomization{}}, InterventionSpec{RankTopS{"w", true}}}) {
    const auto m = marginalize(spec, s, fits.summary);
    CHECK_FALSE(estimate_arm(fits, spec, Estimator::Tmle, {}).se_population.has_value());
    CHECK_THROWS_AS(variance_population(fits.q_treat, fits.q_control, m, 0.5, fits.data.scale),
                    EstimationError);
  }

  const auto ci = wald_ci(1.0, 0.0, 0.95);
  CHECK(ci.first == 1.0);
  CHECK(ci.second == 1.0);
  CHECK(wald_ci(0.0, 1.0, 0.5).second == doctest::Approx(0.6744897501960817).epsilon(1e-13));
  CHECK_THROWS_AS(wald_ci(0.0, 1.0, 1.5), ParseError);
}

TEST_CASE("contrasts use per-subject influence differences") {
  std::mt19937_64 rng(29);
  const Sample s = testsupport::random_sample(rng, 300);
  const auto fits = fit_nuisance(s, KnIdentity{}, kQ, kG);
  const auto c = overall_effect_contrast(fits, RankTopS{"w", true}, CompleteRandomization{}, {});
  CHECK(c.estimate == doctest::Approx(c.first.psi - c.second.psi).epsilon(1e-14));
  const double width = fits.data.scale.width();
  const Eigen::ArrayXd d = (c.first.influence - c.second.influence).array();
  CHECK(c.se == doctest::Approx(std::sqrt(d.square().mean() * width * width / 300.0)).epsilon(1e-13));
  CHECK_FALSE(c.se_population.has_value());

  const auto de = direct_effect(fits, {});
  CHECK(de.first.intervention == "all_treat");
  CHECK(de.second.intervention == "all_control");
  CHECK(de.se_population.has_value());
  // The truth here is 1 + 0.5 * E[W] = 1; the estimate should be near it.
  CHECK(std::abs(de.estimate - 1.0) < 5.0 * de.se);
}

TEST_CASE("truncation is applied to g_n only and counted") {
  Eigen::VectorXd g(4);
  g << 0.001, 0.5, 0.999, 0.3;
  Eigen::VectorXd a(4);
  a << 1, 1, 0, 0;
  MarginalIntervention m;
  m.probs_treat = Eigen::VectorXd::Ones(4);
  const auto h = clever_covariate(m, g, a, 0.005, 0.995);
  CHECK(h.observed[0] == doctest::Approx(1.0 / 0.005));
  CHECK(h.observed[1] == doctest::Approx(2.0));
  CHECK(h.observed[2] == 0.0);
  CHECK(h.truncated_rows == 2);

  // g* identical to g_n: every H is one.
  MarginalIntervention same;
  same.probs_treat = g;
  const auto h1 = clever_covariate(same, g, a, 0.0, 1.0);
  CHECK((h1.observed.array() - 1.0).abs().maxCoeff() < 1e-15);
}

TEST_CASE("JSON records carry the documented fields") {
  std::mt19937_64 rng(31);
  const Sample s = testsupport::random_sample(rng, 80);
  const auto r = tmle(s, KnIdentity{}, CompleteRandomization{}, kQ, kG);
  const auto j = to_json(r);
  for (const char* key : {"psi", "se_conditional", "ci", "epsilon", "weights", "n", "a_bar", "k_value",
                          "intervention", "is_ers", "is_aers"})
    CHECK(j.contains(key));
  CHECK_FALSE(j.contains("se_population"));
  CHECK(j["weights"].contains("truncated_rows"));
}
