#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hazardml/crossfit_nuisance.hpp"
#include "hazardml/debias_scores.hpp"
#include "hazardml/model_evidence.hpp"

namespace hazardml {

enum class Estimator { naive_ml, debias_h, debias_g, debias_latent };

std::string estimator_name(Estimator e);
Estimator parse_estimator(const std::string& name);  // UsageError on unknown names

// zeta_n = c n^{-alpha}
struct ZetaSchedule {
  double c = 1.0;
  double alpha = 0.5;
  double at(std::size_t n) const;
};

struct EstimatorConfig {
  ModelSpec spec;
  FitOptions fit;
  int folds = kDefaultFolds;
  std::uint64_t seed = 1;
  // zeta_H: fixed value, else schedule, else tuned on the grid by CVErr_H.
  std::optional<double> zeta_h;
  std::optional<ZetaSchedule> zeta_schedule;
  std::vector<double> zeta_h_grid = log_grid(1e-6, 10.0);
  // Logistic nuisances: kernels (default_g_kernels when empty) and one zeta per
  // arm (tuned by CVErr_g on the grid when empty).
  std::vector<KernelSpec> g_kernels;
  std::vector<double> zeta_g;
  std::vector<double> zeta_g_grid = log_grid(1e-5, 1.0);
  bool full_newton = false;
  bool freeze_responsibilities = true;
  int threads = 1;
};

struct NuisanceBundle {
  FoldPlan plan;
  std::vector<NuisanceFold> folds;
  std::optional<double> zeta_h;
  std::optional<ZetaCurve> zeta_h_curve;
  std::vector<double> zeta_g;
  std::vector<ZetaGResult> zeta_g_tuning;
};

// Step 2: fold fits plus the Hessian (need_h) and logistic (need_g) nuisances.
NuisanceBundle estimate_nuisances(const CrossfitData& data, const EstimatorConfig& cfg, bool need_h, bool need_g);

struct EstimateReport {
  Estimator estimator = Estimator::naive_ml;
  DebiasedEstimate estimate;
  std::optional<double> zeta_h;
  std::vector<double> zeta_g;
  std::vector<ArmDiagnostics> diagnostics;
  std::size_t g_clipped = 0;
};

// Step 3 on prepared nuisances.
EstimateReport debias(const CrossfitData& data, const NuisanceBundle& bundle, Estimator which,
                      const EstimatorConfig& cfg, const std::optional<Eigen::VectorXd>& theta_star = std::nullopt);

// Full-data penalized ML; SEs from the inverse penalized Hessian.
EstimateReport naive_ml(const PanelDataset& ds, const EstimatorConfig& cfg,
                        const std::optional<Eigen::VectorXd>& theta_star = std::nullopt);

// Runs several estimators on one dataset, sharing the fold fits. The dataset is
// normalized first when it carries no statistics.
std::vector<EstimateReport> run_estimators(const PanelDataset& ds, const std::vector<Estimator>& which,
                                           const EstimatorConfig& cfg,
                                           const std::optional<Eigen::VectorXd>& theta_star = std::nullopt);

}  // namespace hazardml
