#include "tmlesi/estimators.hpp"

#include "tmlesi/normal.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace tmlesi {

namespace {

constexpr int kMaxNewton = 100;

Eigen::VectorXd bounded(const Eigen::VectorXd& q, double bound) {
  return q.cwiseMax(bound).cwiseMin(1.0 - bound);
}

// Logistic loss sum with offset o and slope eps on h, computed stably.
double offset_loss(const Eigen::VectorXd& offset, const Eigen::VectorXd& h,
                   const Eigen::VectorXd& y, double eps) {
  double loss = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double eta = offset[i] + eps * h[i];
    // -[y log p + (1-y) log(1-p)] = log(1 + e^eta) - y * eta
    const double softplus = eta > 0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta));
    loss += softplus - y[i] * eta;
  }
  return loss;
}

}  // namespace

std::string to_string(Estimator e) { return e == Estimator::Tmle ? "tmle" : "aipw"; }

Estimator parse_estimator(const std::string& text) {
  if (text == "tmle") return Estimator::Tmle;
  if (text == "aipw") return Estimator::Aipw;
  throw ParseError("unknown estimator '" + text + "' (expected tmle or aipw)");
}

NuisanceFits fit_nuisance(const Sample& sample, const KnSpec& kn, const ModelSpec& q_spec,
                          const ModelSpec& g_spec, const EstimatorOptions& options) {
  if (q_spec.role != ModelRole::Outcome) throw ParseError("outcome model must have Outcome role");
  if (g_spec.role != ModelRole::Propensity)
    throw ParseError("propensity model must have Propensity role");
  NuisanceFits f{scale_outcome(sample, options.outcome_bounds), exposure_summary(sample, kn), {}, {},
                 {}, {}, {}, {}};
  const Sample& s = f.data.sample;
  f.q_fit = fit_glm(s, q_spec);
  f.g_fit = fit_glm(s, g_spec);
  f.q_observed = predict_observed(f.q_fit, s);
  f.q_treat = predict_at(f.q_fit, s, 1.0);
  f.q_control = predict_at(f.q_fit, s, 0.0);
  f.g_treat = predict(f.g_fit, s.covariates, s.covariate_names, nullptr);
  return f;
}

CleverCovariate clever_covariate(const MarginalIntervention& marginals,
                                 const Eigen::VectorXd& g_treat, const Eigen::VectorXd& exposure,
                                 double trunc_lo, double trunc_hi) {
  const auto n = exposure.size();
  if (marginals.probs_treat.size() != n || g_treat.size() != n)
    throw EstimationError("clever covariate inputs have mismatched lengths");
  CleverCovariate h;
  h.observed.resize(n);
  h.treat.resize(n);
  h.control.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double g1 = std::clamp(g_treat[i], trunc_lo, trunc_hi);
    const double g0 = std::clamp(1.0 - g_treat[i], trunc_lo, trunc_hi);
    const double star1 = marginals.probs_treat[i];
    h.treat[i] = star1 / g1;
    h.control[i] = (1.0 - star1) / g0;
    const bool treated = exposure[i] == 1.0;
    h.observed[i] = treated ? h.treat[i] : h.control[i];
    const double raw = treated ? g_treat[i] : 1.0 - g_treat[i];
    if (raw < trunc_lo || raw > trunc_hi) ++h.truncated_rows;
  }
  return h;
}

CleverCovariate clever_covariate(const MarginalIntervention& marginals, const GlmFit& g_fit,
                                 const Sample& sample, double trunc_lo, double trunc_hi) {
  if (g_fit.spec.role != ModelRole::Propensity)
    throw ParseError("clever covariate needs a propensity model");
  const auto g = predict(g_fit, sample.covariates, sample.covariate_names, nullptr);
  return clever_covariate(marginals, g, sample.exposure, trunc_lo, trunc_hi);
}

Eigen::VectorXd apply_fluctuation(const Eigen::VectorXd& q, const Eigen::VectorXd& h, double eps) {
  Eigen::VectorXd out(q.size());
  for (Eigen::Index i = 0; i < q.size(); ++i) out[i] = expit(logit(q[i]) + eps * h[i]);
  return out;
}

Fluctuation fluctuate(const Eigen::VectorXd& q_init, const Eigen::VectorXd& clever,
                      const Eigen::VectorXd& y) {
  const auto n = y.size();
  if (q_init.size() != n || clever.size() != n)
    throw EstimationError("fluctuation inputs have mismatched lengths");
  if ((q_init.array() <= 0.0).any() || (q_init.array() >= 1.0).any())
    throw EstimationError("fluctuation needs initial predictions strictly inside (0,1)");
  Fluctuation out;
  if ((clever.array() == 0.0).all()) {
    out.q_star = q_init;
    return out;
  }
  Eigen::VectorXd offset(n);
  for (Eigen::Index i = 0; i < n; ++i) offset[i] = logit(q_init[i]);

  const double score_tol = 1e-12 * static_cast<double>(n);
  double eps = 0.0;
  double loss = offset_loss(offset, clever, y, eps);
  double last_step = 0.0;
  double grad = 0.0;
  for (int iter = 0; iter <= kMaxNewton; ++iter) {
    grad = 0.0;
    double hess = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double p = expit(offset[i] + eps * clever[i]);
      grad -= clever[i] * (y[i] - p);
      hess += clever[i] * clever[i] * p * (1.0 - p);
    }
    out.iterations = iter;
    if (std::abs(grad) <= score_tol) {
      out.epsilon = eps;
      out.q_star = apply_fluctuation(q_init, clever, eps);
      return out;
    }
    if (iter == kMaxNewton || !(hess > 0.0)) break;
    double step = -grad / hess;
    double candidate = eps + step;
    double cand_loss = offset_loss(offset, clever, y, candidate);
    // Near the optimum the decrease is below the rounding noise of the loss
    // sum, so allow that much slack before halving.
    const double slack = 1e-13 * (1.0 + std::abs(loss));
    for (int half = 0; half < 60 && !(cand_loss <= loss + slack); ++half) {
      step *= 0.5;
      candidate = eps + step;
      cand_loss = offset_loss(offset, clever, y, candidate);
    }
    last_step = step;
    if (candidate == eps) {
      // No representable progress; accept if the score is already negligible.
      if (std::abs(grad) <= 1e-9 * static_cast<double>(n)) {
        out.epsilon = eps;
        out.q_star = apply_fluctuation(q_init, clever, eps);
        return out;
      }
      break;
    }
    eps = candidate;
    loss = cand_loss;
    if (std::abs(step) <= 1e-12 * (1.0 + std::abs(eps))) {
      out.iterations = iter + 1;
      out.epsilon = eps;
      out.q_star = apply_fluctuation(q_init, clever, eps);
      return out;
    }
  }
  std::ostringstream msg;
  msg << "fluctuation did not converge in " << kMaxNewton << " Newton iterations (epsilon=" << eps
      << ", last step=" << last_step << ", score=" << grad << ")";
  throw EstimationError(msg.str());
}

double variance_conditional(const Eigen::VectorXd& q_observed, const Eigen::VectorXd& clever,
                            const Eigen::VectorXd& y, const OutcomeScale& scale) {
  const Eigen::ArrayXd d = clever.array() * (y - q_observed).array();
  return d.square().mean() * scale.width() * scale.width();
}

double variance_population(const Eigen::VectorXd& q_treat, const Eigen::VectorXd& q_control,
                           const MarginalIntervention& marginals, double psi_scaled,
                           const OutcomeScale& scale) {
  if (!marginals.individual_level)
    throw EstimationError(
        "population variance requires an individual-level intervention (each subject's "
        "assignment may depend only on that subject's covariates)");
  const Eigen::ArrayXd& p = marginals.probs_treat.array();
  const Eigen::ArrayXd m = q_treat.array() * p + q_control.array() * (1.0 - p);
  return (m - psi_scaled).square().mean() * scale.width() * scale.width();
}

std::pair<double, double> wald_ci(double psi, double se, double level) {
  if (!(level > 0.0 && level < 1.0)) throw ParseError("confidence level must lie in (0,1)");
  if (se == 0.0) return {psi, psi};
  const double z = normal_quantile(1.0 - (1.0 - level) / 2.0);
  return {psi - z * se, psi + z * se};
}

EstimateResult estimate_arm(const NuisanceFits& fits, const MarginalIntervention& marginals,
                            Estimator estimator, const EstimatorOptions& options,
                            std::string label) {
  const Sample& s = fits.data.sample;
  const auto& y = s.outcome;
  const double n = static_cast<double>(s.size());
  const auto h = clever_covariate(marginals, fits.g_treat, s.exposure, options.trunc_lo,
                                  options.trunc_hi);

  EstimateResult r;
  r.n = s.size();
  r.a_bar = fits.summary.a_bar;
  r.k_value = fits.summary.k_value;
  r.intervention = std::move(label);
  r.estimator = estimator;
  r.is_ers = marginals.is_ers;
  r.is_aers = marginals.is_aers;
  r.individual_level = marginals.individual_level;
  r.scale = fits.data.scale;
  r.weights = {h.observed.minCoeff(), h.observed.maxCoeff(), h.observed.mean(), h.truncated_rows};

  const Eigen::ArrayXd p1 = marginals.probs_treat.array();
  Eigen::VectorXd q_obs, q1, q0;
  if (estimator == Estimator::Tmle) {
    const auto q_obs0 = bounded(fits.q_observed, options.q_bound);
    const auto fl = fluctuate(q_obs0, h.observed, y);
    r.epsilon = fl.epsilon;
    q_obs = fl.q_star;
    q1 = apply_fluctuation(bounded(fits.q_treat, options.q_bound), h.treat, fl.epsilon);
    q0 = apply_fluctuation(bounded(fits.q_control, options.q_bound), h.control, fl.epsilon);
  } else {
    q_obs = fits.q_observed;
    q1 = fits.q_treat;
    q0 = fits.q_control;
  }
  r.plugin_terms = (q1.array() * p1 + q0.array() * (1.0 - p1)).matrix();
  r.influence = (h.observed.array() * (y - q_obs).array()).matrix();
  r.score_mean = r.influence.mean();
  r.psi_scaled = estimator == Estimator::Tmle ? r.plugin_terms.mean()
                                              : r.plugin_terms.mean() + r.influence.mean();
  r.psi = fits.data.scale.unscale(r.psi_scaled);
  r.within_bounds = r.psi_scaled >= 0.0 && r.psi_scaled <= 1.0;

  const double var_y = variance_conditional(q_obs, h.observed, y, fits.data.scale);
  r.se_conditional = std::sqrt(var_y / n);
  if (marginals.individual_level) {
    const double var_w = variance_population(q1, q0, marginals, r.psi_scaled, fits.data.scale);
    r.se_population = std::sqrt((var_y + var_w) / n);
  }
  r.ci = wald_ci(r.psi, r.se_conditional, options.ci_level);
  return r;
}

EstimateResult estimate_arm(const NuisanceFits& fits, const InterventionSpec& spec,
                            Estimator estimator, const EstimatorOptions& options) {
  const auto marginals = marginalize(spec, fits.data.sample, fits.summary);
  return estimate_arm(fits, marginals, estimator, options, to_string(spec));
}

EstimateResult tmle(const Sample& sample, const KnSpec& kn, const InterventionSpec& spec,
                    const ModelSpec& q_spec, const ModelSpec& g_spec,
                    const EstimatorOptions& options) {
  const auto fits = fit_nuisance(sample, kn, q_spec, g_spec, options);
  return estimate_arm(fits, spec, Estimator::Tmle, options);
}

EstimateResult aipw(const Sample& sample, const KnSpec& kn, const InterventionSpec& spec,
                    const ModelSpec& q_spec, const ModelSpec& g_spec,
                    const EstimatorOptions& options) {
  const auto fits = fit_nuisance(sample, kn, q_spec, g_spec, options);
  return estimate_arm(fits, spec, Estimator::Aipw, options);
}

ContrastResult contrast(const EstimateResult& first, const EstimateResult& second, double ci_level) {
  if (first.n != second.n) throw EstimationError("contrast arms have different sample sizes");
  ContrastResult c;
  c.estimate = first.psi - second.psi;
  const double width = first.scale.width();
  const double n = static_cast<double>(first.n);
  const Eigen::ArrayXd d = (first.influence - second.influence).array();
  const double var_y = d.square().mean() * width * width;
  c.se = std::sqrt(var_y / n);
  if (first.individual_level && second.individual_level) {
    const Eigen::ArrayXd m = (first.plugin_terms - second.plugin_terms).array();
    const double var_w =
        (m - (first.psi_scaled - second.psi_scaled)).square().mean() * width * width;
    c.se_population = std::sqrt((var_y + var_w) / n);
  }
  c.ci = wald_ci(c.estimate, c.se, ci_level);
  c.first = first;
  c.second = second;
  return c;
}

ContrastResult direct_effect(const NuisanceFits& fits, const EstimatorOptions& options,
                             Estimator estimator) {
  return overall_effect_contrast(fits, AllTreat{}, AllControl{}, options, estimator);
}

ContrastResult direct_effect(const Sample& sample, const KnSpec& kn, const ModelSpec& q_spec,
                             const ModelSpec& g_spec, const EstimatorOptions& options,
                             Estimator estimator) {
  return direct_effect(fit_nuisance(sample, kn, q_spec, g_spec, options), options, estimator);
}

ContrastResult overall_effect_contrast(const NuisanceFits& fits, const InterventionSpec& spec_a,
                                       const InterventionSpec& spec_b,
                                       const EstimatorOptions& options, Estimator estimator) {
  return contrast(estimate_arm(fits, spec_a, estimator, options),
                  estimate_arm(fits, spec_b, estimator, options), options.ci_level);
}

ContrastResult overall_effect_contrast(const Sample& sample, const KnSpec& kn,
                                       const InterventionSpec& spec_a,
                                       const InterventionSpec& spec_b, const ModelSpec& q_spec,
                                       const ModelSpec& g_spec, const EstimatorOptions& options,
                                       Estimator estimator) {
  return overall_effect_contrast(fit_nuisance(sample, kn, q_spec, g_spec, options), spec_a, spec_b,
                                 options, estimator);
}

nlohmann::json to_json(const EstimateResult& r) {
  nlohmann::json j;
  j["psi"] = r.psi;
  j["se_conditional"] = r.se_conditional;
  if (r.se_population) j["se_population"] = *r.se_population;
  j["ci"] = {r.ci.first, r.ci.second};
  j["epsilon"] = r.epsilon;
  j["weights"] = {{"min", r.weights.min},
                  {"max", r.weights.max},
                  {"mean", r.weights.mean},
                  {"truncated_rows", r.weights.truncated_rows}};
  j["n"] = r.n;
  j["a_bar"] = r.a_bar;
  j["k_value"] = r.k_value;
  j["intervention"] = r.intervention;
  j["estimator"] = to_string(r.estimator);
  j["is_ers"] = r.is_ers;
  j["is_aers"] = r.is_aers;
  j["within_bounds"] = r.within_bounds;
  j["outcome_scale"] = {r.scale.lower, r.scale.upper};
  return j;
}

nlohmann::json to_json(const ContrastResult& r) {
  nlohmann::json j;
  j["estimate"] = r.estimate;
  j["se"] = r.se;
  if (r.se_population) j["se_population"] = *r.se_population;
  j["ci"] = {r.ci.first, r.ci.second};
  j["components"] = {to_json(r.first), to_json(r.second)};
  return j;
}

}  // namespace tmlesi
