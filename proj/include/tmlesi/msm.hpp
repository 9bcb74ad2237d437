#pragma once

#include "tmlesi/core_data.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <map>
#include <string>
#include <vector>

namespace tmlesi {

/// A per-group effect estimate and the group-level modifiers it is projected on.
struct GroupEffect {
  std::string group_id;
  double psi_hat = 0.0;
  double variance = 0.0;  // squared standard error
  std::map<std::string, double> modifiers;
};

enum class MsmWeighting { InverseVariance, Uniform };

MsmWeighting parse_weighting(const std::string& text);  // "invvar" | "uniform"

/// Right-hand side of the working model: "1 + k + G + G:k". Intercept first
/// unless "0" or "-1" is given. A leading "psi ~" is accepted and ignored.
struct MsmFormula {
  bool intercept = true;
  std::vector<std::vector<std::string>> terms;  // each a product of modifiers

  std::vector<std::string> labels() const;
};

MsmFormula parse_msm_formula(const std::string& text);

Eigen::MatrixXd build_design(const std::vector<GroupEffect>& effects, const MsmFormula& formula);

struct MsmCoefficient {
  std::string term;
  double estimate = 0.0;
  double se = 0.0;
  double z = 0.0;
  double p_value = 1.0;
  std::pair<double, double> ci{0.0, 0.0};
};

struct MsmFit {
  Eigen::VectorXd beta;
  Eigen::MatrixXd covariance;
  std::vector<std::string> design_description;
  Eigen::VectorXd weights_used;
  MsmWeighting weighting = MsmWeighting::InverseVariance;
  /// The fit is a descriptive projection; a causal reading in k requires the
  /// modifiers to control confounding of A-bar, which the data cannot show.
  std::string caveat;

  std::vector<MsmCoefficient> coefficients(double ci_level = 0.95) const;
};

/// Weighted least squares beta = (X'WX)^-1 X'W psi. The covariance treats the
/// psi_hat as independent with the given variances:
/// (X'WX)^-1 X'W V W X (X'WX)^-1, which is (X'WX)^-1 under inverse-variance
/// weights.
MsmFit fit_msm(const std::vector<GroupEffect>& effects, const MsmFormula& formula,
               MsmWeighting weighting = MsmWeighting::InverseVariance);

/// Reads group_id, psi_hat, variance and any further numeric columns as
/// modifiers. An optional `target` column filters rows when `target` is set.
std::vector<GroupEffect> load_group_effects(const std::string& path,
                                            const std::string& target = {});

nlohmann::json to_json(const MsmFit& fit, double ci_level = 0.95);

}  // namespace tmlesi
