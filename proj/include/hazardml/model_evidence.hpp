#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "hazardml/model.hpp"

namespace hazardml {

// Laplace approximation of the log model evidence, reported term by term:
//   log_bme = -nll - penalty + log_lambda_term - half_logdet
// with penalty = sum lambda_k/2 ||u_k||^2 at the mode, log_lambda_term =
// sum_k dim(u_k)/2 ln lambda_k over blocks with lambda_k > 0, and half_logdet =
// (1/2) ln det of the penalized Hessian.
struct EvidenceTerms {
  double nll = 0.0;
  double penalty = 0.0;
  double log_lambda_term = 0.0;
  double half_logdet = 0.0;
  double log_bme = 0.0;
};

// Throws NumericalError when the penalized Hessian is not positive definite.
EvidenceTerms laplace_log_bme(const RowTable& rows, const FittedModel& fitted,
                              const Eigen::MatrixXd* prior_x = nullptr);
// Same formula for an explicit mode: value = nll at the mode, hessian = penalized Hessian.
EvidenceTerms laplace_from_parts(double nll, double penalty, double log_lambda_term,
                                 const Eigen::MatrixXd& penalized_hessian);

// Candidate values {1, 1.5, 2, 3, 5, 7} x 10^k within [lo, hi]; consecutive
// values are roughly ln(1.5) apart.
std::vector<double> log_grid(double lo, double hi);

// Hyperparameters are shared by kernel class: linear kernels share one lambda,
// gaussian kernels of input dimension d share (lambda_d, sigma_d). Empty lists
// keep the values already in the ModelSpec.
struct HyperGrid {
  std::vector<double> linear_lambda;
  std::array<std::vector<double>, 3> gauss_lambda;
  std::array<std::vector<double>, 3> gauss_sigma;
};

struct HyperPoint {
  std::optional<double> linear_lambda;
  std::array<std::optional<double>, 3> gauss_lambda;
  std::array<std::optional<double>, 3> gauss_sigma;

  std::string describe() const;
  auto operator<=>(const HyperPoint&) const = default;
};

ModelSpec with_hyper(ModelSpec spec, const HyperPoint& h);
// Grid points relevant to the ModelSpec's kernel classes, in canonical (sorted) order.
std::vector<HyperPoint> enumerate_grid(const HyperGrid& grid, const ModelSpec& spec);

struct GridEntry {
  HyperPoint point;
  std::optional<EvidenceTerms> terms;
  std::string error;
};

struct EvidenceReport {
  HyperPoint hyper;
  EvidenceTerms terms;
  FittedModel fitted;
  std::vector<GridEntry> entries;
};

// Fits every grid point and keeps the largest log-BME (ties: first in canonical order).
// Throws NumericalError if no grid point yields a finite evidence.
EvidenceReport grid_search(const PanelDataset& ds, const ModelSpec& spec, const HyperGrid& grid,
                           const FitOptions& options = {}, int threads = 1);

struct AuditResult {
  EvidenceReport base;
  EvidenceReport augmented;
  double log_bayes_factor = 0.0;  // augmented minus base
  bool violated = false;
};

// Adds a 1D gaussian kernel on elapsed time t (sharing the 1D hyperparameters) and
// compares evidences. `time_max_rank` caps that kernel's basis (0 adds an empty block).
AuditResult time_homogeneity_audit(const PanelDataset& ds, const ModelSpec& spec, const HyperGrid& grid,
                                   const FitOptions& options = {}, int threads = 1,
                                   Eigen::Index time_max_rank = -1);

// Evidence at fixed hyperparameters: fit then Laplace.
struct SingleEvidence {
  FittedModel fitted;
  EvidenceTerms terms;
};
SingleEvidence evaluate_evidence(const PanelDataset& ds, const ModelSpec& spec, const FitOptions& options = {});

}  // namespace hazardml
