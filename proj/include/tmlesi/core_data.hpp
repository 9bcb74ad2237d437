#pragma once

#include <Eigen/Dense>

#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace tmlesi {

/// Raised for malformed inputs: bad CSV cells, missing columns, invalid specs.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when data are well formed but estimation cannot proceed
/// (degenerate exposure, non-convergence, singular designs).
class EstimationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One group's observed data O^n = {(W_i, A_i, Y_i)}.
///
/// Construct through make_sample(), which enforces the invariants: matching
/// lengths, n >= 2, binary exposure, finite outcomes.
struct Sample {
  std::vector<std::string> covariate_names;
  Eigen::MatrixXd covariates;  // n x d
  Eigen::VectorXd exposure;    // entries exactly 0.0 or 1.0
  Eigen::VectorXd outcome;
  std::string exposure_name = "a";
  std::string outcome_name = "y";
  std::optional<std::string> group_id;

  Eigen::Index size() const { return outcome.size(); }
  /// Column index of a covariate, or -1.
  Eigen::Index covariate_index(const std::string& name) const;
};

Sample make_sample(std::vector<std::string> covariate_names, Eigen::MatrixXd covariates,
                   Eigen::VectorXd exposure, Eigen::VectorXd outcome,
                   std::optional<std::string> group_id = std::nullopt);

/// Throws ParseError if the invariants of Sample do not hold.
void validate(const Sample& sample);

/// Returns a copy of `sample` with rows reordered so that row i of the result
/// is row perm[i] of the input.
Sample permute_rows(const Sample& sample, const std::vector<Eigen::Index>& perm);

// ---------------------------------------------------------------------------
// k_n summary functions
// ---------------------------------------------------------------------------

struct KnIdentity {};
struct KnCount {};
/// Maps a cohort proportion to a wider (e.g. clinic-wide) proportion.
struct KnAffine {
  double slope = 1.0;
  double intercept = 0.0;
};
using KnSpec = std::variant<KnIdentity, KnCount, KnAffine>;

/// "identity", "count", or "affine:slope=<x>,intercept=<y>".
KnSpec parse_kn(const std::string& text);
std::string to_string(const KnSpec& kn);

struct ExposureSummary {
  Eigen::Index n = 0;
  Eigen::Index s_n = 0;  // number exposed
  double a_bar = 0.0;    // s_n / n
  double k_value = 0.0;
};

/// Throws EstimationError("degenerate exposure proportion") when nobody or
/// everybody is exposed.
ExposureSummary exposure_summary(const Sample& sample, const KnSpec& kn);

// ---------------------------------------------------------------------------
// Outcome scaling
// ---------------------------------------------------------------------------

struct OutcomeScale {
  double lower = 0.0;
  double upper = 1.0;

  double scale(double y) const { return (y - lower) / (upper - lower); }
  double unscale(double y_scaled) const { return lower + (upper - lower) * y_scaled; }
  double width() const { return upper - lower; }
};

struct ScaledSample {
  Sample sample;  // outcome replaced by (y - a) / (b - a)
  OutcomeScale scale;
};

/// Auto scaling (no bounds given) uses [min Y, max Y]; constant Y is an error.
/// Explicit bounds must contain every observed outcome.
ScaledSample scale_outcome(const Sample& sample, std::optional<OutcomeScale> bounds = std::nullopt);
Eigen::VectorXd unscale_outcome(const Eigen::VectorXd& scaled, const OutcomeScale& scale);

// ---------------------------------------------------------------------------
// CSV ingestion
// ---------------------------------------------------------------------------

struct CsvSchema {
  std::vector<std::string> covariates;
  std::string exposure = "a";
  std::string outcome = "y";
  std::optional<std::string> group;
};

/// Samples that passed parsing and those rejected per group (e.g. n < 2).
struct LoadedSamples {
  std::vector<Sample> samples;
  std::vector<std::pair<std::string, std::string>> rejected;  // (group, reason)
};

/// One Sample per distinct group value in first-appearance order (or a
/// single Sample when the schema has no group column). Rows keep file order.
LoadedSamples load_samples(const std::string& path, const CsvSchema& schema);
LoadedSamples parse_samples(std::istream& in, const CsvSchema& schema);

/// Convenience for single-group files; throws if there is not exactly one
/// valid group.
Sample load_sample(const std::string& path, const CsvSchema& schema);

/// Writes the sample as CSV with full round-trip precision.
void write_sample(std::ostream& out, const Sample& sample);

/// Splits a CSV line on commas, honouring double quotes.
std::vector<std::string> split_csv_line(const std::string& line);
/// Strict numeric parse; std::nullopt on trailing garbage or empty cell.
std::optional<double> parse_double(const std::string& cell);

}  // namespace tmlesi
