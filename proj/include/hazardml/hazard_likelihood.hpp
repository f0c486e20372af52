#pragma once

#include <cstddef>

#include <Eigen/Dense>

#include "hazardml/panel_data.hpp"

namespace hazardml {

inline constexpr double kEtaClip = 40.0;

// Coordinates of the packed parameter vector x = [theta | w | kappa | beta].
// w holds the design coordinates (kernel blocks then bias); kappa and beta
// exist only for the latent model, beta ending with the prior intercept.
struct ParamLayout {
  Eigen::Index k = 0;
  Eigen::Index p = 0;
  Eigen::Index q = 0;  // prior design width (covariates + intercept); 0 when not latent

  bool latent() const { return q > 0; }
  Eigen::Index theta() const { return 0; }
  Eigen::Index w() const { return k; }
  Eigen::Index kappa() const { return k + p; }
  Eigen::Index beta() const { return k + p + 1; }
  Eigen::Index size() const { return k + p + (latent() ? 1 + q : 0); }
  // theta and w: the coordinates the linear predictor depends on.
  Eigen::Index linear_size() const { return k + p; }
};

// Discretized exponential-hazard likelihood over a row table,
//   U_it = -delta_it * eta_it + exp(eta_it),  eta_it = theta'A_it + phi_it'w + offset_it,
// with the two-class latent extension
//   L_i(Z) = sum_t U_it(eta + kappa Z) + log(1 + exp(-(2Z-1) m_i)),  m_i = x0_i'beta.
// For the latent model nll() is the exact marginal -log sum_Z exp(-L_i(Z)).
//
// All references must outlive the object.
class HazardLikelihood {
 public:
  HazardLikelihood(const RowTable& rows, const Eigen::MatrixXd& phi,
                   const Eigen::MatrixXd* prior_x = nullptr, const Eigen::VectorXd* offset = nullptr);

  const ParamLayout& layout() const { return layout_; }
  const RowTable& rows() const { return rows_; }
  const Eigen::MatrixXd& phi() const { return phi_; }

  double nll(const Eigen::VectorXd& x) const;
  double nll_gradient(const Eigen::VectorXd& x, Eigen::VectorXd& grad) const;
  // Per-subject gradients of nll as rows (marginal when latent); rows sum to the gradient.
  // With r given, gradients of the weighted objective with those responsibilities held fixed.
  Eigen::MatrixXd subject_gradients(const Eigen::VectorXd& x, const Eigen::MatrixXd* r = nullptr) const;
  // Full Hessian of nll (marginal Hessian with the outer-product correction when latent).
  Eigen::MatrixXd hessian(const Eigen::VectorXd& x) const;

  // Latent model only. Posterior r_i(Z) as an n x 2 matrix, computed in log space.
  Eigen::MatrixXd posterior(const Eigen::VectorXd& x) const;
  // Per-subject branch losses L_i(0), L_i(1) as an n x 2 matrix.
  Eigen::MatrixXd branch_losses(const Eigen::VectorXd& x) const;
  // M-step objective sum_i sum_Z r_i(Z) L_i(Z) and its gradient/Hessian.
  double weighted_nll(const Eigen::VectorXd& x, const Eigen::MatrixXd& r) const;
  double weighted_nll_gradient(const Eigen::VectorXd& x, const Eigen::MatrixXd& r,
                               Eigen::VectorXd& grad) const;
  Eigen::MatrixXd weighted_hessian(const Eigen::VectorXd& x, const Eigen::MatrixXd& r) const;
  // sum_i sum_Z r_i(Z) (L_i(Z) + ln r_i(Z)); equals nll(x) when r = posterior(x).
  double variational_bound(const Eigen::VectorXd& x, const Eigen::MatrixXd& r) const;

  // Rows whose linear predictor hit the +/-40 clip during the last evaluation.
  std::size_t last_clip_count() const { return clipped_; }

 private:
  struct Pass;
  Pass forward(const Eigen::VectorXd& x) const;
  double value_and_gradient(const Eigen::VectorXd& x, const Eigen::MatrixXd* r,
                            Eigen::VectorXd* grad) const;
  Eigen::MatrixXd hessian_impl(const Eigen::VectorXd& x, const Eigen::MatrixXd* r,
                               bool marginal) const;

  const RowTable& rows_;
  const Eigen::MatrixXd& phi_;
  const Eigen::MatrixXd* prior_x_;
  const Eigen::VectorXd* offset_;
  ParamLayout layout_;
  mutable std::size_t clipped_ = 0;
};

double softplus(double x);
double logistic(double x);

}  // namespace hazardml
