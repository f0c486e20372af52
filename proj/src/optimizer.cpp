#include "hazardml/optimizer.hpp"

#include <cmath>
#include <deque>
#include <limits>
#include <sstream>

#include "hazardml/error.hpp"

namespace hazardml {

void OptimizerConfig::validate() const {
  if (memory < 1) throw UsageError("L-BFGS memory must be positive");
  if (!(eps_stop > 0.0)) throw UsageError("eps_stop must be positive");
  if (max_iters < 0) throw UsageError("max_iters must be nonnegative");
  if (!(armijo_c > 0.0 && armijo_c < 1.0)) throw UsageError("armijo_c must lie in (0, 1)");
  if (!(backtrack_factor > 0.0 && backtrack_factor < 1.0))
    throw UsageError("backtrack_factor must lie in (0, 1)");
}

namespace {

struct Pair {
  Eigen::VectorXd s, y;
  double rho;
};

// Two-loop recursion: returns -H g.
Eigen::VectorXd lbfgs_direction(const std::deque<Pair>& hist, const Eigen::VectorXd& g) {
  Eigen::VectorXd q = g;
  std::vector<double> alpha(hist.size());
  for (std::size_t j = hist.size(); j-- > 0;) {
    alpha[j] = hist[j].rho * hist[j].s.dot(q);
    q -= alpha[j] * hist[j].y;
  }
  if (!hist.empty()) {
    const Pair& last = hist.back();
    q *= last.s.dot(last.y) / last.y.squaredNorm();
  }
  for (std::size_t j = 0; j < hist.size(); ++j) {
    const double beta = hist[j].rho * hist[j].y.dot(q);
    q += (alpha[j] - beta) * hist[j].s;
  }
  return -q;
}

bool finite(double v, const Eigen::VectorXd& g) { return std::isfinite(v) && g.allFinite(); }

}  // namespace

OptimizerResult minimize(const Objective& objective, Eigen::VectorXd x0, const OptimizerConfig& cfg) {
  cfg.validate();
  OptimizerResult res;
  Eigen::VectorXd g(x0.size());
  double f = objective(x0, g);
  if (!finite(f, g)) throw NumericalError("objective is not finite at the starting point");
  res.x = std::move(x0);
  res.values.push_back(f);

  std::deque<Pair> hist;
  int flat_steps = 0;
  Eigen::VectorXd x_new(res.x.size()), g_new(res.x.size());
  int it = 0;
  for (; it < cfg.max_iters; ++it) {
    const double gnorm = g.norm();
    if (gnorm < cfg.eps_stop) {
      res.converged = true;
      break;
    }
    Eigen::VectorXd p = lbfgs_direction(hist, g);
    double slope = g.dot(p);
    if (!(slope < 0.0)) {
      hist.clear();
      p = -g;
      slope = -g.squaredNorm();
    }
    double step = hist.empty() ? std::min(1.0, 1.0 / gnorm) : 1.0;

    bool accepted = false;
    double f_new = 0.0;
    for (int bt = 0; bt <= cfg.max_backtracks; ++bt) {
      x_new = res.x + step * p;
      f_new = objective(x_new, g_new);
      if (finite(f_new, g_new) && f_new <= f + cfg.armijo_c * step * slope) {
        accepted = true;
        break;
      }
      step *= cfg.backtrack_factor;
    }
    if (!accepted) {
      if (!hist.empty()) {
        // Stale curvature pairs can produce a poor direction; retry once from steepest descent.
        hist.clear();
        --it;
        continue;
      }
      std::ostringstream msg;
      msg << "line search failed after " << cfg.max_backtracks << " backtracks at iteration " << it
          << " (objective " << f << ", gradient norm " << gnorm << ")";
      throw NumericalError(msg.str());
    }

    Pair pr{x_new - res.x, g_new - g, 0.0};
    const double sy = pr.s.dot(pr.y);
    if (sy > 1e-12 * pr.s.norm() * pr.y.norm() && sy > 0.0) {
      pr.rho = 1.0 / sy;
      hist.push_back(std::move(pr));
      if (static_cast<int>(hist.size()) > cfg.memory) hist.pop_front();
    }
    // Decreases at the level of rounding noise mean no further progress is possible.
    flat_steps = f - f_new <= 4.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(f))
                     ? flat_steps + 1
                     : 0;
    res.x.swap(x_new);
    g.swap(g_new);
    f = f_new;
    res.values.push_back(f);
    if (flat_steps >= 5) {
      res.stalled = true;
      ++it;
      break;
    }
  }
  res.value = f;
  res.grad_norm = g.norm();
  res.iterations = it;
  if (!res.converged && res.grad_norm < cfg.eps_stop) res.converged = true;
  return res;
}

}  // namespace hazardml
