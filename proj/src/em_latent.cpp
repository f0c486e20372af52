#include "hazardml/em_latent.hpp"

#include <cmath>
#include <sstream>

#include "hazardml/error.hpp"

namespace hazardml {

Eigen::MatrixXd e_step(const HazardLikelihood& lik, const Eigen::VectorXd& x) { return lik.posterior(x); }

OptimizerResult m_step(const HazardLikelihood& lik, const Eigen::MatrixXd& r,
                       const Eigen::VectorXd& penalty_weights, const Eigen::VectorXd& x0,
                       const OptimizerConfig& cfg) {
  const ParamLayout lay = lik.layout();
  auto objective = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    const double v = lik.weighted_nll_gradient(x, r, g);
    const auto w = x.segment(lay.w(), lay.p);
    g.segment(lay.w(), lay.p).array() += penalty_weights.array() * w.array();
    return v + ridge_penalty(penalty_weights, w);
  };
  return minimize(objective, x0, cfg);
}

EMResult em_fit(const HazardLikelihood& lik, const Eigen::VectorXd& penalty_weights,
                const Eigen::VectorXd& x0, const EMConfig& cfg) {
  if (!lik.layout().latent()) throw UsageError("EM needs the latent model");
  if (!(cfg.tol_marginal_nll > 0.0)) throw UsageError("EM tolerance must be positive");
  const ParamLayout lay = lik.layout();
  auto penalized = [&](const Eigen::VectorXd& x) {
    return lik.nll(x) + ridge_penalty(penalty_weights, x.segment(lay.w(), lay.p));
  };
  EMResult res;
  res.x = x0;
  double prev = penalized(res.x);
  if (!std::isfinite(prev)) throw NumericalError("EM starting point has a non-finite objective");
  res.trace.push_back(prev);
  for (int it = 0; it < cfg.max_em_iters; ++it) {
    const Eigen::MatrixXd r = e_step(lik, res.x);
    const OptimizerResult m = m_step(lik, r, penalty_weights, res.x, cfg.m_step);
    const double cur = penalized(m.x);
    res.iterations = it + 1;
    if (cur > prev + cfg.descent_slack * std::max(1.0, std::abs(prev))) {
      std::ostringstream msg;
      msg << "EM objective increased from " << prev << " to " << cur << " at iteration " << it + 1;
      throw NumericalError(msg.str());
    }
    res.x = m.x;
    res.trace.push_back(cur);
    if (prev - cur < cfg.tol_marginal_nll) {
      res.converged = true;
      break;
    }
    prev = cur;
  }
  res.responsibilities = e_step(lik, res.x);
  return res;
}

Eigen::VectorXd latent_start(const FittedModel& plain, const ParamLayout& latent_layout,
                             const Eigen::VectorXd& theta, double kappa, const Eigen::VectorXd& beta,
                             const Eigen::MatrixXd& prior_x) {
  Eigen::VectorXd x = Eigen::VectorXd::Zero(latent_layout.size());
  x.segment(latent_layout.theta(), latent_layout.k) = theta;
  x.segment(latent_layout.w(), latent_layout.p) = plain.x.segment(plain.layout.w(), plain.layout.p);
  x(latent_layout.kappa()) = kappa;
  x.segment(latent_layout.beta(), latent_layout.q) = beta;
  double mix = 0.0;
  for (Eigen::Index i = 0; i < prior_x.rows(); ++i) {
    const double p1 = logistic(prior_x.row(i).dot(beta));
    mix += (1.0 - p1) + p1 * std::exp(kappa);
  }
  mix /= static_cast<double>(std::max<Eigen::Index>(prior_x.rows(), 1));
  x(latent_layout.w() + latent_layout.p - 1) -= std::log(mix);
  return x;
}

Eigen::VectorXd normalize_prior_coefficients(const Eigen::VectorXd& beta_raw,
                                             const std::vector<int>& covariates,
                                             const Normalization& norm) {
  const auto q = static_cast<Eigen::Index>(covariates.size());
  if (beta_raw.size() != q + 1) throw UsageError("prior coefficients need one entry per covariate plus an intercept");
  Eigen::VectorXd out(q + 1);
  double intercept = beta_raw(q);
  for (Eigen::Index j = 0; j < q; ++j) {
    const auto c = static_cast<std::size_t>(covariates[static_cast<std::size_t>(j)]);
    out(j) = beta_raw(j) * norm.std[c];
    intercept += beta_raw(j) * norm.mean[c];
  }
  out(q) = intercept;
  return out;
}

}  // namespace hazardml
