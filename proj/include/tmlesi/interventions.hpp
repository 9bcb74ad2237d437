#pragma once

#include "tmlesi/core_data.hpp"

#include <Eigen/Dense>

#include <string>
#include <variant>

namespace tmlesi {

struct AllTreat {};
struct AllControl {};
/// Uniform over exposure vectors with the observed number exposed.
struct CompleteRandomization {};
/// Exposes the S_n subjects ranking highest (descending) or lowest
/// (ascending) on a covariate column. Ties go to the lower row index.
struct RankTopS {
  std::string score;
  bool descending = true;
};
/// Independent exposure with probability p for every subject.
struct Bernoulli {
  double p = 0.5;
};
struct ExplicitMarginals {
  Eigen::VectorXd probabilities;
};

using InterventionSpec =
    std::variant<AllTreat, AllControl, CompleteRandomization, RankTopS, Bernoulli, ExplicitMarginals>;

/// Parses "all_treat", "all_control", "complete_randomization",
/// "rank_top_s:score=<column>,direction=desc|asc", "bernoulli:p=<x>".
/// "explicit:<path>" reads one probability per line (an optional header
/// line is skipped).
InterventionSpec parse_intervention(const std::string& text);
std::string to_string(const InterventionSpec& spec);

/// Individual-level marginal treatment probabilities g*(1 | W_i) implied by
/// an intervention at the observed exposure summary.
struct MarginalIntervention {
  Eigen::VectorXd probs_treat;
  bool is_ers = false;
  bool is_aers = false;
  /// True when each subject's probability depends on that subject's own
  /// covariates only (not on the rest of the sample or on A-bar).
  bool individual_level = false;
};

MarginalIntervention marginalize(const InterventionSpec& spec, const Sample& sample,
                                 const ExposureSummary& summary);

bool check_aers(const MarginalIntervention& marginals, const ExposureSummary& summary,
                double tol = 1e-12);
bool check_ers(const InterventionSpec& spec, const ExposureSummary& summary);

}  // namespace tmlesi
