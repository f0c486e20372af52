#pragma once

#include <vector>

#include <Eigen/Dense>

#include "hazardml/hazard_likelihood.hpp"
#include "hazardml/model.hpp"

namespace hazardml {

// Posterior responsibilities r_i(Z) (n x 2) at x.
Eigen::MatrixXd e_step(const HazardLikelihood& lik, const Eigen::VectorXd& x);

// Minimizes sum_i sum_Z r_i(Z) L_i(Z) + sum lambda/2 ||u||^2 from the warm start x0.
OptimizerResult m_step(const HazardLikelihood& lik, const Eigen::MatrixXd& r,
                       const Eigen::VectorXd& penalty_weights, const Eigen::VectorXd& x0,
                       const OptimizerConfig& cfg);

struct EMResult {
  Eigen::VectorXd x;
  Eigen::MatrixXd responsibilities;
  std::vector<double> trace;  // penalized marginal objective, starting at x0
  int iterations = 0;
  bool converged = false;
};

// Alternates e_step/m_step until the penalized marginal objective improves by
// less than tol. Throws NumericalError if an iteration increases it by more than
// cfg.descent_slack.
EMResult em_fit(const HazardLikelihood& lik, const Eigen::VectorXd& penalty_weights,
                const Eigen::VectorXd& x0, const EMConfig& cfg);

// Latent starting point from a plain fit: copies theta and w, shifts the bias so
// the prior-averaged baseline hazard is preserved, and sets kappa and beta.
Eigen::VectorXd latent_start(const FittedModel& plain, const ParamLayout& latent_layout,
                             const Eigen::VectorXd& theta, double kappa, const Eigen::VectorXd& beta,
                             const Eigen::MatrixXd& prior_x);

// Converts prior coefficients on raw covariates (intercept last) to the
// normalized baseline design used by the likelihood.
Eigen::VectorXd normalize_prior_coefficients(const Eigen::VectorXd& beta_raw,
                                             const std::vector<int>& covariates,
                                             const Normalization& norm);

}  // namespace hazardml
