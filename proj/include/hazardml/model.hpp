#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hazardml/hazard_likelihood.hpp"
#include "hazardml/kernel_engine.hpp"
#include "hazardml/optimizer.hpp"
#include "hazardml/panel_data.hpp"

namespace hazardml {

// Multi-kernel model f = sum_k L_k u_k + b, optionally with a two-class latent block.
struct ModelSpec {
  std::vector<KernelSpec> kernels;
  bool latent = false;
  std::vector<int> prior_covariates;  // covariate indices entering the latent prior
  double ichol_tol = kDefaultIcholTol;
  Eigen::Index max_rank = -1;

  void validate(int input_dim) const;
};

struct EMConfig {
  int max_em_iters = 200;
  double tol_marginal_nll = 1e-6;
  double descent_slack = 1e-8;
  int random_starts = 5;  // used when no starting point is supplied
  std::uint64_t seed = 1;
  OptimizerConfig m_step;
};

// Latent starting values independent of the basis: the plain fit supplies f.
struct LatentInit {
  Eigen::VectorXd theta;
  double kappa = 0.0;
  Eigen::VectorXd beta;  // normalized prior coefficients, intercept last
};

struct FitOptions {
  OptimizerConfig optimizer;
  EMConfig em;
  // Latent fits: explicit starting point, or values to build one from a plain fit.
  // Multi-start is used when both are absent.
  std::optional<Eigen::VectorXd> start;
  std::optional<LatentInit> latent_init;
};

struct FittedModel {
  ModelSpec spec;
  Design design;
  ParamLayout layout;
  Eigen::VectorXd x;
  Eigen::VectorXd penalty_weights;  // per w coordinate
  double nll = 0.0;                 // marginal NLL when latent
  double penalty = 0.0;
  double grad_norm = 0.0;
  int iterations = 0;
  bool converged = false;
  std::size_t clipped = 0;
  // Latent model only.
  Eigen::MatrixXd responsibilities;
  std::vector<double> em_trace;     // penalized marginal objective after each EM iteration
  bool unstable_kappa = false;      // |kappa| <= 1, where the latent fit is known to be fragile

  Eigen::VectorXd theta() const { return x.segment(layout.theta(), layout.k); }
  Eigen::VectorXd w() const { return x.segment(layout.w(), layout.p); }
  double kappa() const { return layout.latent() ? x(layout.kappa()) : 0.0; }
  Eigen::VectorXd beta() const { return layout.latent() ? x.segment(layout.beta(), layout.q) : Eigen::VectorXd(); }
  FunctionExpansion f() const { return expansion_from_design(design, w()); }
  double objective() const { return nll + penalty; }
};

double ridge_penalty(const Eigen::VectorXd& weights, const Eigen::VectorXd& w);

// Fits on the given rows. `prior_x` (baseline_design of the same subjects) is required when latent.
FittedModel fit_model(const RowTable& rows, const ModelSpec& spec, const FitOptions& options = {},
                      const Eigen::MatrixXd* prior_x = nullptr);

// Fits with a prebuilt design (used when the caller shares one basis across fits).
FittedModel fit_with_design(const RowTable& rows, Design design, const ModelSpec& spec,
                            const FitOptions& options, const Eigen::MatrixXd* prior_x);

// Parses "linear:age", "gauss:X1,X2" style kernel descriptions against covariate names;
// the name "t" denotes elapsed time.
KernelSpec parse_kernel(const std::string& text, const std::vector<std::string>& names);
std::string describe_kernel(const KernelSpec& spec, const std::vector<std::string>& names);

}  // namespace hazardml
