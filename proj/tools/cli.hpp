#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace tmlesi::cli {

enum ExitCode : int { kOk = 0, kEstimationFailure = 1, kConfigError = 2 };

struct EstimateConfig {
  std::string data;
  std::string output;       // JSON; stdout when empty
  std::string effects_out;  // optional CSV consumed by `msm`
  std::vector<std::string> covariates;  // default: every other column
  std::string exposure = "a";
  std::string outcome = "y";
  std::string group;
  std::string q_formula;  // default: outcome on covariates + exposure, logit
  std::string g_formula;  // default: exposure on covariates, logit
  std::string kn = "identity";
  std::string estimator = "tmle";
  std::vector<std::string> interventions;  // single-arm estimates
  std::vector<std::string> contrasts;      // "A vs B"
  std::vector<double> bounds;              // empty or {lower, upper}
  double trunc_lo = 0.005;
  double trunc_hi = 0.995;
  double ci_level = 0.95;
  std::uint64_t seed = 0;  // recorded only; estimation is deterministic
};

struct SimulateConfig {
  std::vector<std::string> regimes{"correct_both"};
  std::vector<long> ns{500};
  std::vector<double> betas{1.0};
  std::vector<std::string> estimands{"direct", "oers"};
  bool table1 = false;
  int replicates = 1000;
  std::uint64_t seed = 20240601;
  int threads = 0;
  double ci_level = 0.95;
  double trunc_lo = 0.005;
  double trunc_hi = 0.995;
  std::string output;  // CSV; stdout when empty
};

struct MsmConfig {
  std::string effects;
  std::string formula = "1 + k";
  std::string weights = "invvar";
  std::string target;  // filters the effects file's `target` column
  double ci_level = 0.95;
  std::string output;  // JSON; stdout when empty
};

/// Parses argv, runs the chosen command and returns its exit code. Results go
/// to `out` unless an output path is configured; diagnostics go to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace tmlesi::cli
