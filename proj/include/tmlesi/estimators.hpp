#pragma once

#include "tmlesi/core_data.hpp"
#include "tmlesi/glm.hpp"
#include "tmlesi/interventions.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <optional>
#include <string>
#include <utility>

namespace tmlesi {

enum class Estimator { Tmle, Aipw };

std::string to_string(Estimator e);
Estimator parse_estimator(const std::string& text);

struct EstimatorOptions {
  /// Truncation applied to g_n(A|W) in the clever-covariate denominator.
  double trunc_lo = 0.005;
  double trunc_hi = 0.995;
  /// Bound applied to initial outcome predictions before taking logits.
  double q_bound = 1e-6;
  double ci_level = 0.95;
  /// Explicit outcome bounds; auto min/max scaling when absent.
  std::optional<OutcomeScale> outcome_bounds;
};

/// Initial nuisance estimates shared by every target parameter of one group.
/// Outcome predictions are on the scaled [0,1] outcome, unbounded (identity
/// fits may leave [0,1]); estimators bound them as needed.
struct NuisanceFits {
  ScaledSample data;
  ExposureSummary summary;
  GlmFit q_fit;
  GlmFit g_fit;
  Eigen::VectorXd q_observed;  // Q(W_i, A_i)
  Eigen::VectorXd q_treat;     // Q(W_i, 1)
  Eigen::VectorXd q_control;   // Q(W_i, 0)
  Eigen::VectorXd g_treat;     // g_n(1 | W_i), untruncated
};

NuisanceFits fit_nuisance(const Sample& sample, const KnSpec& kn, const ModelSpec& q_spec,
                          const ModelSpec& g_spec, const EstimatorOptions& options = {});

/// H(W, a) = g*(a|W) / g_n(a|W) at the observed and at both counterfactual
/// exposure levels.
struct CleverCovariate {
  Eigen::VectorXd observed;
  Eigen::VectorXd treat;
  Eigen::VectorXd control;
  Eigen::Index truncated_rows = 0;  // rows whose observed-arm g_n was truncated
};

CleverCovariate clever_covariate(const MarginalIntervention& marginals,
                                 const Eigen::VectorXd& g_treat, const Eigen::VectorXd& exposure,
                                 double trunc_lo, double trunc_hi);
CleverCovariate clever_covariate(const MarginalIntervention& marginals, const GlmFit& g_fit,
                                 const Sample& sample, double trunc_lo = 0.005,
                                 double trunc_hi = 0.995);

struct Fluctuation {
  double epsilon = 0.0;
  Eigen::VectorXd q_star;  // fluctuated predictions at the observed rows
  int iterations = 0;
};

/// Minimizes the logistic loss of y on the clever covariate with offset
/// logit(q_init) by one-dimensional Newton with step-halving.
/// q_init must already lie strictly inside (0,1).
Fluctuation fluctuate(const Eigen::VectorXd& q_init, const Eigen::VectorXd& clever,
                      const Eigen::VectorXd& y_scaled);

/// expit(logit q + epsilon * h), elementwise.
Eigen::VectorXd apply_fluctuation(const Eigen::VectorXd& q, const Eigen::VectorXd& h, double epsilon);

struct WeightDiagnostics {
  double min = 0.0;
  double max = 0.0;
  double mean = 0.0;
  Eigen::Index truncated_rows = 0;
};

struct EstimateResult {
  double psi = 0.0;  // original outcome scale
  double psi_scaled = 0.0;
  double se_conditional = 0.0;
  std::optional<double> se_population;
  std::pair<double, double> ci{0.0, 0.0};
  double epsilon = 0.0;
  WeightDiagnostics weights;
  Eigen::Index n = 0;
  double a_bar = 0.0;
  double k_value = 0.0;
  std::string intervention;
  Estimator estimator = Estimator::Tmle;
  bool is_ers = false;
  bool is_aers = false;
  bool individual_level = false;
  bool within_bounds = true;
  OutcomeScale scale;
  double score_mean = 0.0;  // n^-1 sum H_i (y_i - q_i), scaled

  // Per-subject pieces on the scaled outcome, kept for contrasts.
  Eigen::VectorXd influence;     // H_i (y_i - q_i)
  Eigen::VectorXd plugin_terms;  // sum_a q(W_i, a) g*(a | W_i)
};

struct ContrastResult {
  double estimate = 0.0;
  double se = 0.0;
  std::optional<double> se_population;
  std::pair<double, double> ci{0.0, 0.0};
  EstimateResult first;
  EstimateResult second;
};

/// Point estimate and inference for one intervention from shared fits.
EstimateResult estimate_arm(const NuisanceFits& fits, const MarginalIntervention& marginals,
                            Estimator estimator, const EstimatorOptions& options,
                            std::string label = {});
EstimateResult estimate_arm(const NuisanceFits& fits, const InterventionSpec& spec,
                            Estimator estimator, const EstimatorOptions& options);

EstimateResult tmle(const Sample& sample, const KnSpec& kn, const InterventionSpec& spec,
                    const ModelSpec& q_spec, const ModelSpec& g_spec,
                    const EstimatorOptions& options = {});
EstimateResult aipw(const Sample& sample, const KnSpec& kn, const InterventionSpec& spec,
                    const ModelSpec& q_spec, const ModelSpec& g_spec,
                    const EstimatorOptions& options = {});

/// n^-1 sum [H_i (y_i - q_i)]^2 on the scaled outcome, times (b - a)^2.
double variance_conditional(const Eigen::VectorXd& q_observed, const Eigen::VectorXd& clever,
                            const Eigen::VectorXd& y_scaled, const OutcomeScale& scale);

/// n^-1 sum [sum_a q(W_i,a) g*(a|W_i) - psi]^2 times (b - a)^2. Only defined
/// for individual-level interventions; throws EstimationError otherwise.
double variance_population(const Eigen::VectorXd& q_treat, const Eigen::VectorXd& q_control,
                           const MarginalIntervention& marginals, double psi_scaled,
                           const OutcomeScale& scale);

std::pair<double, double> wald_ci(double psi, double se, double level);

/// First minus second, with the standard error from per-subject influence
/// differences (the arms share data).
ContrastResult contrast(const EstimateResult& first, const EstimateResult& second, double ci_level);

ContrastResult direct_effect(const Sample& sample, const KnSpec& kn, const ModelSpec& q_spec,
                             const ModelSpec& g_spec, const EstimatorOptions& options = {},
                             Estimator estimator = Estimator::Tmle);
ContrastResult direct_effect(const NuisanceFits& fits, const EstimatorOptions& options,
                             Estimator estimator = Estimator::Tmle);

ContrastResult overall_effect_contrast(const Sample& sample, const KnSpec& kn,
                                       const InterventionSpec& spec_a,
                                       const InterventionSpec& spec_b, const ModelSpec& q_spec,
                                       const ModelSpec& g_spec,
                                       const EstimatorOptions& options = {},
                                       Estimator estimator = Estimator::Tmle);
ContrastResult overall_effect_contrast(const NuisanceFits& fits, const InterventionSpec& spec_a,
                                       const InterventionSpec& spec_b,
                                       const EstimatorOptions& options,
                                       Estimator estimator = Estimator::Tmle);

nlohmann::json to_json(const EstimateResult& r);
nlohmann::json to_json(const ContrastResult& r);

}  // namespace tmlesi
