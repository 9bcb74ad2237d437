#pragma once

#include "tmlesi/core_data.hpp"
#include "tmlesi/estimators.hpp"
#include "tmlesi/glm.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace tmlesi::sim {

enum class Regime { CorrectBoth, MisQ, MisG };
enum class Estimand { DirectEffect, OersOverall, CompleteRandOverall };

std::string to_string(Regime r);
std::string to_string(Estimand e);
Regime parse_regime(const std::string& text);      // correct_both | mis_q | mis_g
Estimand parse_estimand(const std::string& text);  // direct | oers | complete_rand

/// Independent random stream for one replicate attempt. The engine is
/// std::mt19937_64 keyed through std::seed_seq by (seed, replicate, attempt),
/// so streams do not depend on scheduling. Normal variates use the inverse
/// CDF of a uniform with 53 random bits.
class Stream {
 public:
  Stream(std::uint64_t seed, std::uint64_t replicate, std::uint64_t attempt = 0);

  double uniform();  // in (0, 1)
  double normal();

 private:
  std::mt19937_64 engine_;
};

struct GeneratedSample {
  Sample sample;
  Eigen::VectorXd latent_y0;  // U^Y_i = Y_i(0)
  bool degenerate = false;    // nobody or everybody exposed
};

/// W ~ N(0,1); P(A=1|W) = expit(W); Y(0) ~ N(0,1);
/// Y = Y(0) + A * W * (1 - beta * A-bar). Draw order: all W, then all A,
/// then all Y(0).
GeneratedSample generate_sample(Eigen::Index n, double beta, Stream& stream);

/// (1 - beta * A-bar) * mean(W).
double true_direct_effect(const Sample& sample, double beta);
/// (1 - beta * A-bar) * n^-1 * sum of the S_n largest W.
double true_oers_overall(const Sample& sample, double beta);
/// (1 - beta * A-bar) * A-bar * mean(W).
double true_complete_rand_overall(const Sample& sample, double beta);

struct RegimeSpecs {
  ModelSpec q_spec;
  ModelSpec g_spec;
};

/// Outcome: y ~ 1 + w + a + w:a (interaction dropped under MisQ), logistic
/// working model on the [0,1]-scaled outcome. Propensity: a ~ 1 + w, logit (probit under MisG).
RegimeSpecs regime_specs(Regime regime);

struct SimConfig {
  Eigen::Index n = 500;
  double beta = 1.0;
  Regime regime = Regime::CorrectBoth;
  Estimand estimand = Estimand::DirectEffect;
  int replicates = 1000;
  std::uint64_t seed = 20240601;
  double ci_level = 0.95;
  EstimatorOptions options;
  int threads = 0;  // 0: OpenMP default
};

struct SimCellResult {
  Regime regime = Regime::CorrectBoth;
  Eigen::Index n = 0;
  double beta = 0.0;
  Estimand estimand = Estimand::DirectEffect;
  int replicates = 0;
  double bias = 0.0;
  double mse = 0.0;
  double coverage = 0.0;
  double mc_se_of_coverage = 0.0;
  double truth_mean = 0.0;
  double truth_sd = 0.0;
  double error_variance = 0.0;  // empirical variance (1/R) of estimate - truth
  int replicate_failures = 0;
  int degenerate_redraws = 0;
};

/// One replicate's outcome for a single estimand.
struct ReplicateRecord {
  bool failed = false;
  double estimate = 0.0;
  double truth = 0.0;
  bool covered = false;
};

/// Runs replicate `index` for every requested estimand from shared nuisance
/// fits. Also reports how many degenerate draws were skipped.
std::vector<ReplicateRecord> run_replicate(const SimConfig& config,
                                           const std::vector<Estimand>& estimands, int index,
                                           int* redraws = nullptr);

/// OpenMP map over replicates followed by an index-ordered reduction.
std::vector<SimCellResult> run_cells(const SimConfig& config, const std::vector<Estimand>& estimands);
/// Single-threaded reference implementation of run_cells.
std::vector<SimCellResult> run_cells_serial(const SimConfig& config,
                                            const std::vector<Estimand>& estimands);

SimCellResult run_cell(const SimConfig& config);
SimCellResult run_cell_serial(const SimConfig& config);

/// Aggregates per-replicate records; throws EstimationError when more than
/// 1% of replicates failed.
SimCellResult summarize(const SimConfig& config, Estimand estimand,
                        const std::vector<ReplicateRecord>& records, int redraws);

std::string csv_header();
std::string to_csv_row(const SimCellResult& r);

}  // namespace tmlesi::sim
