#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "hazardml/estimators.hpp"
#include "hazardml/sim_dgp.hpp"

namespace hazardml {

// Kernel model for simulated cohorts: linear age (unpenalized), gaussian date,
// X1 and (unless dropped) X2; the latent variant adds a prior on the blood tests.
struct SimModelOptions {
  bool include_x2 = true;
  bool include_time = false;
  bool latent = false;
  double sigma = 1.0;
  double lambda = 1.0;
};
ModelSpec sim_model_spec(const PanelDataset& ds, const SimModelOptions& opt);

// Near-truth latent starting values for a simulated cohort (breaks the label
// symmetry); `ds` must carry its normalization.
LatentInit sim_latent_init(const SimConfig& cfg, const PanelDataset& ds, const ModelSpec& spec);

struct ExperimentConfig {
  SimConfig sim;
  int replicates = 50;
  std::uint64_t seed = 1;
  std::vector<Estimator> estimators{Estimator::naive_ml, Estimator::debias_h, Estimator::debias_g};
  EstimatorConfig estimator;  // spec is rebuilt per replicate from `model`
  SimModelOptions model;
  int threads = 1;
};

struct ReplicateRow {
  int replicate = 0;
  std::uint64_t seed = 0;
  Estimator estimator = Estimator::naive_ml;
  bool ok = false;
  std::string error;
  Eigen::VectorXd theta, se, t;
};

struct ExperimentSummary {
  Estimator estimator = Estimator::naive_ml;
  int arm = 0;
  int succeeded = 0;
  int failed = 0;
  double mean_theta = 0.0;
  double mean_t = 0.0;
  double std_t = 0.0;
};

struct ExperimentResult {
  int replicates = 0;
  std::vector<ReplicateRow> rows;
  std::vector<ExperimentSummary> summaries;
};

using ProgressFn = std::function<void(int replicate, const std::vector<ReplicateRow>&)>;

// Replicate r simulates with derive_seed(seed, r) and folds with the same seed.
// Failures are recorded per row and excluded from the summaries.
ExperimentResult replicate_experiment(const ExperimentConfig& cfg, const ProgressFn& progress = {});

std::vector<ExperimentSummary> summarize(const std::vector<ReplicateRow>& rows, const std::vector<Estimator>& which,
                                         int arms);

void write_replicates_csv(const ExperimentResult& res, std::ostream& out);
void write_summary_csv(const ExperimentResult& res, std::ostream& out);
// Counts of t-statistics in bins of `width` over [lo, hi), with open-ended end bins.
void write_histogram_csv(const ExperimentResult& res, std::ostream& out, double lo = -6.0, double hi = 6.0,
                         double width = 0.5);

}  // namespace hazardml
