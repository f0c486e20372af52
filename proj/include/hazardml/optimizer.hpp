#pragma once

#include <functional>
#include <vector>

#include <Eigen/Dense>

namespace hazardml {

struct OptimizerConfig {
  int memory = 10;
  double eps_stop = 1.0e-2;
  int max_iters = 2000;
  double armijo_c = 1e-4;
  double backtrack_factor = 0.5;
  int max_backtracks = 50;

  void validate() const;
};

// Returns the objective value and writes the gradient.
using Objective = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd& grad)>;

struct OptimizerResult {
  Eigen::VectorXd x;
  double value = 0.0;
  double grad_norm = 0.0;
  int iterations = 0;
  bool converged = false;       // false means max_iters was reached or the run stalled
  bool stalled = false;         // objective stopped decreasing beyond rounding before eps_stop
  std::vector<double> values;   // objective after each accepted step, starting at x0
};

// L-BFGS with Armijo backtracking. Throws NumericalError when the objective is
// non-finite at x0 or the line search fails after max_backtracks halvings.
OptimizerResult minimize(const Objective& objective, Eigen::VectorXd x0,
                         const OptimizerConfig& cfg = {});

}  // namespace hazardml
