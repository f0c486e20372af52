#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hazardml/crossfit_nuisance.hpp"

namespace hazardml {

enum class Route { h, g, latent };

std::string route_name(Route r);

// One subject's score as a function of theta:
//   phi_k(theta) = sum_l p(k, l) e^{theta_l} + q(k) e^{-theta_k} + c(k).
struct ScoreTerms {
  Eigen::MatrixXd p;  // K x K
  Eigen::VectorXd q;  // K
  Eigen::VectorXd c;  // K

  explicit ScoreTerms(int k = 0);
  Eigen::VectorXd value(const Eigen::VectorXd& theta) const;
  Eigen::MatrixXd jacobian(const Eigen::VectorXd& theta) const;
  ScoreTerms& operator+=(const ScoreTerms& o);
};

// Logistic-route pieces of one subject, per arm: q is the event term, s2/s3/s4
// the treated-integral, untreated-integral and untreated-event terms, so that
// phi_k = e^{-theta_k} q_k - s2_k + s3_k - s4_k.
struct GTerms {
  Eigen::VectorXd q, s2, s3, s4;
  std::size_t clipped = 0;

  ScoreTerms terms() const;
};

// `f`, `g` (one vector per arm) and `phi` are indexed by the rows of `rows`.
GTerms g_score_terms(const RowTable& rows, std::size_t subject, const Eigen::VectorXd& f,
                     const std::vector<Eigen::VectorXd>& g);

// d_theta l - C d_f l, with f-coordinates given by the rows of `phi`; C is
// K x phi.cols(). A zero C gives the uncorrected ML score.
ScoreTerms h_score_terms(const RowTable& rows, std::size_t subject, const Eigen::VectorXd& f,
                         const Eigen::MatrixXd& phi, const Eigen::MatrixXd& c);

struct ArmDiagnostics {
  double s1 = 0.0, s2 = 0.0, s3 = 0.0, s4 = 0.0;  // logistic route only
};

class ScoreSystem {
 public:
  virtual ~ScoreSystem() = default;
  virtual Route route() const = 0;
  virtual int arms() const = 0;
  virtual std::size_t subjects() const = 0;
  // Per-subject scores as rows (n x K).
  virtual Eigen::MatrixXd scores(const Eigen::VectorXd& theta) const = 0;
  // Sum over subjects of d phi / d theta (K x K).
  virtual Eigen::MatrixXd jacobian(const Eigen::VectorXd& theta) const = 0;
  // Root of the summed score.
  virtual Eigen::VectorXd solve() const = 0;
};

// Scores that are linear in e^{theta} and e^{-theta} (logistic and H routes).
class LinearScoreSystem : public ScoreSystem {
 public:
  LinearScoreSystem(Route route, std::vector<ScoreTerms> per_subject);

  Route route() const override { return route_; }
  int arms() const override { return static_cast<int>(total_.c.size()); }
  std::size_t subjects() const override { return terms_.size(); }
  Eigen::MatrixXd scores(const Eigen::VectorXd& theta) const override;
  Eigen::MatrixXd jacobian(const Eigen::VectorXd& theta) const override { return total_.jacobian(theta); }
  // Closed form when only e^{-theta} (or only e^{theta}) terms are present,
  // Newton otherwise. Throws NumericalError naming the arm when no positive root exists.
  Eigen::VectorXd solve() const override;

  const ScoreTerms& total() const { return total_; }
  std::vector<ArmDiagnostics> diagnostics;
  std::size_t clipped = 0;

 private:
  Route route_;
  std::vector<ScoreTerms> terms_;
  ScoreTerms total_;
};

// Latent route: marginal-likelihood scores d_theta l - C d_rest l on each
// holdout split, linearized around theta0. With freeze set, the posterior
// class weights stay at each fold's fitted point; the Jacobian is always the
// marginal Hessian.
class LatentScoreSystem : public ScoreSystem {
 public:
  LatentScoreSystem(const CrossfitData& data, const std::vector<NuisanceFold>& folds,
                    const std::vector<Eigen::MatrixXd>& corrections, Eigen::VectorXd theta0,
                    bool full_newton = false, bool freeze = true);
  ~LatentScoreSystem() override;

  Route route() const override { return Route::latent; }
  int arms() const override { return static_cast<int>(theta0_.size()); }
  std::size_t subjects() const override { return n_; }
  Eigen::MatrixXd scores(const Eigen::VectorXd& theta) const override;
  Eigen::MatrixXd jacobian(const Eigen::VectorXd& theta) const override;
  // One Newton step from theta0; iterated to convergence when full_newton is set.
  Eigen::VectorXd solve() const override;
  const Eigen::VectorXd& theta0() const { return theta0_; }

 private:
  struct Block;
  std::vector<std::unique_ptr<Block>> blocks_;
  Eigen::VectorXd theta0_;
  std::size_t n_ = 0;
  bool full_newton_;
  bool freeze_;
};

// Scores for every holdout subject, each with the nuisances of its own fold.
LinearScoreSystem assemble_g_system(const CrossfitData& data, const std::vector<NuisanceFold>& folds);
// `corrections[m]` is the fold's C matrix (see correction_matrix).
LinearScoreSystem assemble_h_system(const CrossfitData& data, const std::vector<NuisanceFold>& folds,
                                    const std::vector<Eigen::MatrixXd>& corrections);

struct DebiasedEstimate {
  Route route = Route::h;
  Eigen::VectorXd theta;
  Eigen::MatrixXd sigma;
  Eigen::VectorXd se;
  std::optional<Eigen::VectorXd> t;  // against a supplied reference
};

// Sigma = J^{-1} Omega J^{-T} with J = n^{-1} sum d phi/d theta and Omega = n^{-2} sum phi phi'.
DebiasedEstimate sandwich_se(const ScoreSystem& system, const Eigen::VectorXd& theta,
                             const std::optional<Eigen::VectorXd>& theta_star = std::nullopt);

Eigen::VectorXd t_statistics(const Eigen::VectorXd& theta, const Eigen::VectorXd& se,
                             const Eigen::VectorXd& theta_star);

}  // namespace hazardml
