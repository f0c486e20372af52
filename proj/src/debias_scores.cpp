#include "hazardml/debias_scores.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "hazardml/error.hpp"
#include "hazardml/hazard_likelihood.hpp"

namespace hazardml {

std::string route_name(Route r) {
  switch (r) {
    case Route::h: return "h";
    case Route::g: return "g";
    case Route::latent: return "latent";
  }
  return "?";
}

ScoreTerms::ScoreTerms(int k)
    : p(Eigen::MatrixXd::Zero(k, k)), q(Eigen::VectorXd::Zero(k)), c(Eigen::VectorXd::Zero(k)) {}

Eigen::VectorXd ScoreTerms::value(const Eigen::VectorXd& theta) const {
  return p * theta.array().exp().matrix() + (q.array() * (-theta.array()).exp()).matrix() + c;
}

Eigen::MatrixXd ScoreTerms::jacobian(const Eigen::VectorXd& theta) const {
  Eigen::MatrixXd j = p * theta.array().exp().matrix().asDiagonal();
  j.diagonal().array() -= q.array() * (-theta.array()).exp();
  return j;
}

ScoreTerms& ScoreTerms::operator+=(const ScoreTerms& o) {
  p += o.p;
  q += o.q;
  c += o.c;
  return *this;
}

ScoreTerms GTerms::terms() const {
  ScoreTerms t(static_cast<int>(q.size()));
  t.q = q;
  t.c = -(s2 - s3 + s4);
  return t;
}

GTerms g_score_terms(const RowTable& rows, std::size_t subject, const Eigen::VectorXd& f,
                     const std::vector<Eigen::VectorXd>& g) {
  const int k = rows.k_count;
  if (static_cast<int>(g.size()) != k) throw UsageError("need one g vector per arm");
  GTerms t;
  t.q = t.s2 = t.s3 = t.s4 = Eigen::VectorXd::Zero(k);
  auto clip = [&](double v) {
    if (std::abs(v) <= kGClip) return v;
    ++t.clipped;
    return std::copysign(kGClip, v);
  };
  for (std::size_t r = rows.subject_offset[subject]; r < rows.subject_offset[subject + 1]; ++r) {
    const auto ri = static_cast<Eigen::Index>(r);
    const int a = rows.arm[r];
    const bool ev = rows.event[r] != 0;
    const double ef = std::exp(f(ri));
    if (a >= 0) {
      const double w = 1.0 + std::exp(-clip(g[static_cast<std::size_t>(a)](ri)));
      if (ev) t.q(a) += w;
      t.s2(a) += ef * w;
    } else {
      for (int l = 0; l < k; ++l) {
        const double w = 1.0 + std::exp(clip(g[static_cast<std::size_t>(l)](ri)));
        t.s3(l) += ef * w;
        if (ev) t.s4(l) += w;
      }
    }
  }
  return t;
}

ScoreTerms h_score_terms(const RowTable& rows, std::size_t subject, const Eigen::VectorXd& f,
                         const Eigen::MatrixXd& phi, const Eigen::MatrixXd& c) {
  const int k = rows.k_count;
  const Eigen::Index pw = phi.cols();
  if (c.rows() != k || c.cols() != pw) throw UsageError("correction matrix has the wrong shape");
  // d_theta l = diag(a) e^theta - d and d_f l = V e^theta + w.
  Eigen::VectorXd a = Eigen::VectorXd::Zero(k), d = Eigen::VectorXd::Zero(k);
  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(pw, k);
  Eigen::VectorXd w = Eigen::VectorXd::Zero(pw);
  for (std::size_t r = rows.subject_offset[subject]; r < rows.subject_offset[subject + 1]; ++r) {
    const auto ri = static_cast<Eigen::Index>(r);
    const int arm = rows.arm[r];
    const double ef = std::exp(f(ri));
    const bool ev = rows.event[r] != 0;
    if (arm >= 0) {
      a(arm) += ef;
      v.col(arm) += ef * phi.row(ri).transpose();
      if (ev) d(arm) += 1.0;
    } else {
      w += ef * phi.row(ri).transpose();
    }
    if (ev) w -= phi.row(ri).transpose();
  }
  ScoreTerms t(k);
  t.p = a.asDiagonal();
  t.p -= c * v;
  t.c = -d - c * w;
  return t;
}

LinearScoreSystem::LinearScoreSystem(Route route, std::vector<ScoreTerms> per_subject)
    : route_(route), terms_(std::move(per_subject)) {
  if (terms_.empty()) throw UsageError("score system has no subjects");
  total_ = ScoreTerms(static_cast<int>(terms_.front().c.size()));
  for (const auto& t : terms_) total_ += t;
  if (!total_.c.allFinite()) throw NumericalError("score constant term is not finite");
}

Eigen::MatrixXd LinearScoreSystem::scores(const Eigen::VectorXd& theta) const {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(terms_.size()), theta.size());
  for (std::size_t i = 0; i < terms_.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = terms_[i].value(theta).transpose();
  return out;
}

Eigen::VectorXd LinearScoreSystem::solve() const {
  const int k = arms();
  const bool has_p = total_.p.cwiseAbs().maxCoeff() > 0.0;
  const bool has_q = total_.q.cwiseAbs().maxCoeff() > 0.0;
  Eigen::VectorXd theta(k);
  if (!has_p) {
    for (int a = 0; a < k; ++a) {
      const double s1 = total_.q(a), bracket = -total_.c(a);
      if (!(s1 > 0.0) || !(bracket > 0.0)) {
        std::ostringstream msg;
        msg << "unidentifiable arm " << a + 1 << ": S1 = " << s1 << ", S2 - S3 + S4 = " << bracket
            << " (no positive root; typically no events in this arm)";
        throw NumericalError(msg.str());
      }
      theta(a) = std::log(s1 / bracket);
    }
    return theta;
  }
  if (!has_q) {
    const Eigen::FullPivLU<Eigen::MatrixXd> lu(total_.p);
    if (!lu.isInvertible()) throw NumericalError("score system is singular");
    const Eigen::VectorXd z = lu.solve(-total_.c);
    for (int a = 0; a < k; ++a)
      if (!(z(a) > 0.0))
        throw NumericalError("unidentifiable arm " + std::to_string(a + 1) +
                             ": solution for e^theta is not positive (typically no events in this arm)");
    return z.array().log().matrix();
  }
  // Mixed terms: damped Newton on the summed score.
  theta.setZero(k);
  for (int it = 0; it < 100; ++it) {
    const Eigen::VectorXd r = total_.value(theta);
    if (r.norm() <= 1e-13 * (1.0 + total_.c.norm())) return theta;
    const Eigen::FullPivLU<Eigen::MatrixXd> lu(total_.jacobian(theta));
    if (!lu.isInvertible()) throw NumericalError("score Jacobian is singular");
    Eigen::VectorXd step = lu.solve(r);
    double t = 1.0;
    while (t > 1e-10 && total_.value(theta - t * step).norm() >= r.norm()) t *= 0.5;
    theta -= t * step;
  }
  throw NumericalError("score root search did not converge");
}

struct LatentScoreSystem::Block {
  RowTable rows;
  Eigen::MatrixXd phi, prior, c, r;
  Eigen::VectorXd offset, x;
  std::unique_ptr<HazardLikelihood> lik;

  Eigen::VectorXd point(const Eigen::VectorXd& theta) const {
    Eigen::VectorXd out = x;
    out.head(theta.size()) = theta;
    return out;
  }
};

LatentScoreSystem::LatentScoreSystem(const CrossfitData& data, const std::vector<NuisanceFold>& folds,
                                     const std::vector<Eigen::MatrixXd>& corrections, Eigen::VectorXd theta0,
                                     bool full_newton, bool freeze)
    : theta0_(std::move(theta0)), full_newton_(full_newton), freeze_(freeze) {
  if (!data.spec.latent) throw UsageError("latent route needs a latent model");
  if (corrections.size() != folds.size()) throw UsageError("need one correction matrix per fold");
  for (std::size_t m = 0; m < folds.size(); ++m) {
    const auto& fold = folds[m];
    if (fold.holdout.empty()) continue;
    auto b = std::make_unique<Block>();
    b->rows = data.table(fold.holdout);
    b->phi = data.gather(data.combined.phi, fold.holdout);
    b->offset = data.gather(fold.f_rows, fold.holdout);
    b->prior = data.prior(fold.holdout);
    b->c = corrections[m];
    b->x = fold_point(data, fold);
    b->lik = std::make_unique<HazardLikelihood>(b->rows, b->phi, &b->prior, &b->offset);
    b->r = b->lik->posterior(b->x);
    n_ += fold.holdout.size();
    blocks_.push_back(std::move(b));
  }
  if (n_ == 0) throw UsageError("score system has no subjects");
}

LatentScoreSystem::~LatentScoreSystem() = default;

Eigen::MatrixXd LatentScoreSystem::scores(const Eigen::VectorXd& theta) const {
  const Eigen::Index k = theta.size();
  Eigen::MatrixXd out(static_cast<Eigen::Index>(n_), k);
  Eigen::Index at = 0;
  for (const auto& b : blocks_) {
    const Eigen::MatrixXd g = b->lik->subject_gradients(b->point(theta), freeze_ ? &b->r : nullptr);
    const Eigen::Index rest = g.cols() - k;
    out.middleRows(at, g.rows()) = g.leftCols(k) - g.rightCols(rest) * b->c.transpose();
    at += g.rows();
  }
  return out;
}

Eigen::MatrixXd LatentScoreSystem::jacobian(const Eigen::VectorXd& theta) const {
  const Eigen::Index k = theta.size();
  Eigen::MatrixXd j = Eigen::MatrixXd::Zero(k, k);
  for (const auto& b : blocks_) {
    const Eigen::MatrixXd h = b->lik->hessian(b->point(theta));
    const Eigen::Index rest = h.rows() - k;
    j += h.topLeftCorner(k, k) - b->c * h.bottomLeftCorner(rest, k);
  }
  return j;
}

Eigen::VectorXd LatentScoreSystem::solve() const {
  Eigen::VectorXd theta = theta0_;
  for (int it = 0; it < (full_newton_ ? 50 : 1); ++it) {
    const Eigen::FullPivLU<Eigen::MatrixXd> lu(jacobian(theta));
    if (!lu.isInvertible()) throw NumericalError("latent score Jacobian is singular at the linearization point");
    const Eigen::VectorXd step = lu.solve(scores(theta).colwise().sum().transpose());
    theta -= step;
    if (step.norm() < 1e-12) break;
  }
  return theta;
}

namespace {

template <class TermsFn>
std::vector<ScoreTerms> holdout_terms(const std::vector<NuisanceFold>& folds, TermsFn&& fn) {
  std::vector<ScoreTerms> out;
  for (std::size_t m = 0; m < folds.size(); ++m)
    for (std::size_t s : folds[m].holdout) out.push_back(fn(m, s));
  return out;
}

}  // namespace

LinearScoreSystem assemble_g_system(const CrossfitData& data, const std::vector<NuisanceFold>& folds) {
  const int k = data.rows.k_count;
  std::vector<ArmDiagnostics> diag(static_cast<std::size_t>(k));
  std::size_t clipped = 0;
  auto terms = holdout_terms(folds, [&](std::size_t m, std::size_t s) {
    if (static_cast<int>(folds[m].g_rows.size()) != k) throw UsageError("fold is missing g nuisances");
    const GTerms g = g_score_terms(data.rows, s, folds[m].f_rows, folds[m].g_rows);
    for (int a = 0; a < k; ++a) {
      auto& d = diag[static_cast<std::size_t>(a)];
      d.s1 += g.q(a);
      d.s2 += g.s2(a);
      d.s3 += g.s3(a);
      d.s4 += g.s4(a);
    }
    clipped += g.clipped;
    return g.terms();
  });
  LinearScoreSystem sys(Route::g, std::move(terms));
  sys.diagnostics = std::move(diag);
  sys.clipped = clipped;
  return sys;
}

LinearScoreSystem assemble_h_system(const CrossfitData& data, const std::vector<NuisanceFold>& folds,
                                    const std::vector<Eigen::MatrixXd>& corrections) {
  if (corrections.size() != folds.size()) throw UsageError("need one correction matrix per fold");
  auto terms = holdout_terms(folds, [&](std::size_t m, std::size_t s) {
    return h_score_terms(data.rows, s, folds[m].f_rows, data.combined.phi, corrections[m]);
  });
  LinearScoreSystem sys(Route::h, std::move(terms));
  sys.diagnostics.assign(static_cast<std::size_t>(data.rows.k_count), ArmDiagnostics{});
  return sys;
}

Eigen::VectorXd t_statistics(const Eigen::VectorXd& theta, const Eigen::VectorXd& se,
                             const Eigen::VectorXd& theta_star) {
  if (theta_star.size() != theta.size()) throw UsageError("reference theta has the wrong length");
  return ((theta - theta_star).array() / se.array()).matrix();
}

DebiasedEstimate sandwich_se(const ScoreSystem& system, const Eigen::VectorXd& theta,
                             const std::optional<Eigen::VectorXd>& theta_star) {
  const double n = static_cast<double>(system.subjects());
  const Eigen::MatrixXd phi = system.scores(theta);
  const Eigen::MatrixXd j = system.jacobian(theta) / n;
  const Eigen::MatrixXd omega = phi.transpose() * phi / (n * n);
  const Eigen::FullPivLU<Eigen::MatrixXd> lu(j);
  if (!lu.isInvertible()) throw NumericalError("score Jacobian is singular; no sandwich variance");
  const Eigen::MatrixXd jinv = lu.inverse();
  DebiasedEstimate est;
  est.route = system.route();
  est.theta = theta;
  est.sigma = jinv * omega * jinv.transpose();
  est.sigma = 0.5 * (est.sigma + est.sigma.transpose()).eval();
  est.se = est.sigma.diagonal().cwiseMax(0.0).cwiseSqrt();
  if (theta_star) est.t = t_statistics(theta, est.se, *theta_star);
  return est;
}

}  // namespace hazardml
