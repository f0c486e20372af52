#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hazardml/model.hpp"

namespace hazardml {

// Subject-level partition into M folds. For fold m the training set excludes
// folds m and m+1 (mod M), fold m+1 validates and fold m is held out.
struct FoldPlan {
  int m_count = 0;
  std::vector<int> assignment;  // subject index -> fold

  std::vector<std::size_t> fold(int m) const;
  std::vector<std::size_t> train(int m) const;
  std::vector<std::size_t> validation(int m) const { return fold((m + 1) % m_count); }
  std::vector<std::size_t> holdout(int m) const { return fold(m); }
};

inline constexpr int kDefaultFolds = 5;

// Deterministic in seed; fold sizes differ by at most one. Throws UsageError for
// M < 3 or M greater than the subject count.
FoldPlan make_folds(std::size_t n_subjects, int m_count, std::uint64_t seed);

// Per-subject averages of the Hessian blocks of the NLL, in the shared
// coordinates (theta | f-coordinates [| kappa | beta]).
struct HessianBlocks {
  Eigen::MatrixXd tt;  // K x K
  Eigen::MatrixXd tf;  // K x P
  Eigen::MatrixXd ff;  // P x P
};

// Full-dataset tables shared by every fold: the row table, the combined basis
// (f-coordinates for every Hessian and score) and the latent prior design.
struct CrossfitData {
  const PanelDataset* ds = nullptr;
  ModelSpec spec;
  RowTable rows;
  Design combined;
  Eigen::MatrixXd prior_x;  // latent only

  CrossfitData(const PanelDataset& data, const ModelSpec& model);
  // Rows of `m` (rows x cols over every row) belonging to the given subjects.
  Eigen::MatrixXd gather(const Eigen::MatrixXd& m, const std::vector<std::size_t>& subjects) const;
  Eigen::VectorXd gather(const Eigen::VectorXd& v, const std::vector<std::size_t>& subjects) const;
  RowTable table(const std::vector<std::size_t>& subjects) const;
  Eigen::MatrixXd prior(const std::vector<std::size_t>& subjects) const;
};

struct NuisanceFold {
  int m = 0;
  std::vector<std::size_t> train, validation, holdout;
  std::optional<FittedModel> fit;  // absent when the fold was loaded from a bundle
  Eigen::VectorXd theta;           // theta-hat of the training fit
  double kappa = 0.0;              // latent only
  Eigen::VectorXd beta;            // latent only
  FunctionExpansion f_hat;
  Eigen::VectorXd f_rows;          // f-hat evaluated on every row of the dataset
  std::optional<HessianBlocks> h_train, h_val;
  std::vector<FunctionExpansion> g_hat;  // per arm (logistic route)
  std::vector<Eigen::VectorXd> g_rows;   // per arm, g-hat on every row
};

// ML fit on the training split; f-hat is transferred to every row. Throws
// DataError "no events in training split" when the split has no events.
NuisanceFold fit_fold_ml(const CrossfitData& data, const FoldPlan& plan, int m, const FitOptions& options = {});

// Parameters of the fold at which Hessians and scores are evaluated: theta-hat,
// zero f-coordinates (f enters as an offset) and kappa, beta when latent.
Eigen::VectorXd fold_point(const CrossfitData& data, const NuisanceFold& fold);

HessianBlocks hessian_blocks(const CrossfitData& data, const NuisanceFold& fold,
                             const std::vector<std::size_t>& subjects);
// Fills h_train and h_val.
void attach_hessians(const CrossfitData& data, NuisanceFold& fold);

// H_tf (H_ff + zeta I)^{-1}; throws NumericalError when the shifted matrix is singular.
Eigen::MatrixXd correction_matrix(const HessianBlocks& h, double zeta);

// Sum over arms and folds of ||H_tf^val - C^train H_ff^val||^2.
double cverr_h(const std::vector<NuisanceFold>& folds, double zeta);

struct ZetaCurve {
  std::vector<double> grid;
  std::vector<double> value;  // NaN where the grid point was skipped
  double best = 0.0;
};
ZetaCurve tune_zeta_h(const std::vector<NuisanceFold>& folds, const std::vector<double>& grid);

// ---- Logistic nuisance g_k ----

inline constexpr double kGClip = 15.0;

// (1/n) sum_i sum_t {A_k softplus(-g) + (1 - sum A) softplus(g)} dt + zeta ||u||^2
// over rows of arm k (y = 1) and untreated rows (y = 0); the bias is unpenalized.
class LogisticObjective {
 public:
  LogisticObjective(const RowTable& rows, const Eigen::MatrixXd& phi, int arm, double zeta);
  double value(const Eigen::VectorXd& u) const;
  double value_gradient(const Eigen::VectorXd& u, Eigen::VectorXd& grad) const;
  Eigen::MatrixXd hessian(const Eigen::VectorXd& u) const;
  // Unpenalized weighted log loss summed over subjects (n times the data term).
  double total_loss(const Eigen::VectorXd& u) const;
  double subjects() const { return n_; }
  Eigen::VectorXd penalty_mask() const;  // 1 on kernel coordinates, 0 on the bias

 private:
  const RowTable& rows_;
  const Eigen::MatrixXd& phi_;
  Eigen::VectorXd y_, weight_;
  double zeta_;
  double n_;
};

struct GFit {
  Design design;
  Eigen::VectorXd u;
  FunctionExpansion g;
  double objective = 0.0;
  double log_bme = 0.0;
  double log_bme_trivial = 0.0;  // intercept-only g (constant treatment share)
  bool trivial = false;          // log_bme below the intercept-only evidence
  bool converged = false;
};

// Throws DataError naming the arm when either class has no person-time (positivity).
GFit fit_g_k(const RowTable& rows, const std::vector<KernelSpec>& kernels, int arm, double zeta,
             const OptimizerConfig& cfg = {}, double ichol_tol = kDefaultIcholTol);

// Inner bracket of the CV error: sum_rows {A_k (e^{-g} - 1) + (1 - sum A)(e^{g} - 1)} dt,
// with |g| clipped at kGClip (clips counted).
double g_balance(const RowTable& rows, const Eigen::VectorXd& g, int arm, std::size_t* clipped = nullptr);

// zeta_cv minimizes CVErr_g over grid points that are not trivial, i.e. whose
// full-data log-BME is nearer the best value than the intercept-only value.
struct ZetaGResult {
  ZetaCurve cverr;    // CVErr_g per grid point
  ZetaCurve log_bme;  // full-data logistic evidence per grid point (best = argmax)
  std::vector<bool> trivial;
  double zeta_cv = 0.0;
  double zeta_bme = 0.0;
};
ZetaGResult tune_zeta_g(const CrossfitData& data, const FoldPlan& plan, const std::vector<KernelSpec>& kernels,
                        int arm, const std::vector<double>& grid, const OptimizerConfig& cfg = {},
                        int threads = 1);

// Fits g_k for every arm on the fold's training split and evaluates on every row.
void attach_g(const CrossfitData& data, NuisanceFold& fold, const std::vector<KernelSpec>& kernels,
              const std::vector<double>& zeta_per_arm, const OptimizerConfig& cfg = {});

// Default g model: one 1D gaussian per covariate, reusing the f model's 1D
// bandwidth and lambda when present.
std::vector<KernelSpec> default_g_kernels(const PanelDataset& ds, const ModelSpec& f_model);

}  // namespace hazardml
