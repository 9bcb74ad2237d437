#pragma once

#include "tmlesi/core_data.hpp"

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace tmlesi {

enum class Link { Logit, Probit, Identity };
enum class ModelRole { Outcome, Propensity };

std::string to_string(Link link);

/// One column of a design matrix. An empty variable list is the intercept;
/// one variable a main effect; two an interaction.
struct Term {
  std::vector<std::string> variables;

  bool is_intercept() const { return variables.empty(); }
  std::string label() const;
  friend bool operator==(const Term&, const Term&) = default;
};

struct ModelSpec {
  std::string response;
  std::vector<Term> terms;  // intercept first when present
  Link link = Link::Logit;
  ModelRole role = ModelRole::Outcome;

  std::string formula() const;
};

/// Parses "y ~ 1 + w1 + a + w1:a" or "a ~ 1 + w1 [probit]".
///
/// An intercept is included unless the right-hand side contains "0" or "-1".
/// Without a bracketed link, outcome models default to logit and propensity
/// models to logit. Role is taken from the argument, not inferred.
ModelSpec parse_formula(const std::string& text, ModelRole role);

/// Checks the spec against a sample: terms reference known variables,
/// propensity models do not use the exposure, the response matches the role.
void check_spec(const ModelSpec& spec, const Sample& sample);

/// Design matrix for the given covariates and exposure values. `exposure` may
/// be null for models that do not reference it.
Eigen::MatrixXd design_matrix(const ModelSpec& spec, const std::vector<std::string>& covariate_names,
                              const Eigen::MatrixXd& covariates, const Eigen::VectorXd* exposure,
                              const std::string& exposure_name);

struct GlmFit {
  ModelSpec spec;
  std::vector<std::string> covariate_names;
  std::string exposure_name;
  Eigen::VectorXd coefficients;
  bool converged = false;
  int iterations = 0;
  double deviance = 0.0;
};

/// Maximum-likelihood fit. Logit and probit maximize the Bernoulli
/// (quasi-)likelihood by IRLS with step-halving; identity is least squares.
/// Responses for logit/probit must lie in [0,1].
GlmFit fit_glm(const Sample& sample, const ModelSpec& spec);

/// Lower-level entry point on a prebuilt design.
GlmFit fit_glm(const Eigen::MatrixXd& design, const Eigen::VectorXd& response, const ModelSpec& spec);

/// Mean-scale predictions. `covariate_names` must match the names the model
/// was fitted with.
Eigen::VectorXd predict(const GlmFit& fit, const Eigen::MatrixXd& covariates,
                        const std::vector<std::string>& covariate_names,
                        const Eigen::VectorXd* exposure = nullptr);

/// Predictions for every row of `sample` with the exposure fixed at `a`.
Eigen::VectorXd predict_at(const GlmFit& fit, const Sample& sample, double a);

/// Predictions at each row's observed exposure.
Eigen::VectorXd predict_observed(const GlmFit& fit, const Sample& sample);

/// Inverse link.
double mean_from_eta(Link link, double eta);

}  // namespace tmlesi
