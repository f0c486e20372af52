#include "hazardml/hazard_likelihood.hpp"

#include <cmath>

#include "hazardml/error.hpp"
#include "hazardml/simd/kernels.hpp"

namespace hazardml {

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

struct HazardLikelihood::Pass {
  Eigen::VectorXd eta;
  Eigen::VectorXd expeta;
  Eigen::VectorXd s;     // per subject: sum_t exp(eta)
  Eigen::VectorXd nev;   // per subject: sum_t delta
  Eigen::VectorXd deta;  // per subject: sum_t delta * eta
  Eigen::VectorXd m;     // per subject prior logit (latent)
};

HazardLikelihood::HazardLikelihood(const RowTable& rows, const Eigen::MatrixXd& phi,
                                   const Eigen::MatrixXd* prior_x, const Eigen::VectorXd* offset)
    : rows_(rows), phi_(phi), prior_x_(prior_x), offset_(offset) {
  if (static_cast<std::size_t>(phi.rows()) != rows.rows())
    throw UsageError("design rows do not match the row table");
  if (offset != nullptr && static_cast<std::size_t>(offset->size()) != rows.rows())
    throw UsageError("offset length does not match the row table");
  if (prior_x != nullptr && static_cast<std::size_t>(prior_x->rows()) != rows.subjects())
    throw UsageError("prior design rows do not match subject count");
  layout_.k = rows.k_count;
  layout_.p = phi.cols();
  layout_.q = prior_x != nullptr ? prior_x->cols() : 0;
}

HazardLikelihood::Pass HazardLikelihood::forward(const Eigen::VectorXd& x) const {
  if (x.size() != layout_.size()) throw UsageError("parameter vector has wrong length");
  const auto n_rows = static_cast<Eigen::Index>(rows_.rows());
  Pass p;
  p.eta.noalias() = phi_ * x.segment(layout_.w(), layout_.p);
  if (offset_ != nullptr) p.eta += *offset_;
  std::size_t clipped = 0;
  for (Eigen::Index r = 0; r < n_rows; ++r) {
    const int a = rows_.arm[static_cast<std::size_t>(r)];
    double v = p.eta(r) + (a >= 0 ? x(layout_.theta() + a) : 0.0);
    if (v > kEtaClip) {
      v = kEtaClip;
      ++clipped;
    } else if (v < -kEtaClip) {
      v = -kEtaClip;
      ++clipped;
    }
    p.eta(r) = v;
  }
  clipped_ = clipped;
  p.expeta.resize(n_rows);
  simd::active().exp_clamped(p.eta.data(), p.expeta.data(), static_cast<std::size_t>(n_rows),
                             -kEtaClip, kEtaClip);

  const auto n = static_cast<Eigen::Index>(rows_.subjects());
  p.s.resize(n);
  p.nev.resize(n);
  p.deta.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto lo = static_cast<Eigen::Index>(rows_.subject_offset[static_cast<std::size_t>(i)]);
    const auto hi = static_cast<Eigen::Index>(rows_.subject_offset[static_cast<std::size_t>(i) + 1]);
    double s = 0.0, nev = 0.0, deta = 0.0;
    for (Eigen::Index r = lo; r < hi; ++r) {
      s += p.expeta(r);
      if (rows_.event[static_cast<std::size_t>(r)]) {
        nev += 1.0;
        deta += p.eta(r);
      }
    }
    p.s(i) = s;
    p.nev(i) = nev;
    p.deta(i) = deta;
  }
  if (layout_.latent()) p.m.noalias() = (*prior_x_) * x.segment(layout_.beta(), layout_.q);
  return p;
}

namespace {

struct Branches {
  Eigen::VectorXd l0, l1;
};

Branches branches(const Eigen::VectorXd& s, const Eigen::VectorXd& nev, const Eigen::VectorXd& deta,
                  const Eigen::VectorXd& m, double kappa) {
  const double ek = std::exp(kappa);
  Branches b;
  b.l0.resize(s.size());
  b.l1.resize(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    b.l0(i) = -deta(i) + s(i) + softplus(m(i));
    b.l1(i) = -deta(i) - kappa * nev(i) + ek * s(i) + softplus(-m(i));
  }
  return b;
}

Eigen::MatrixXd posterior_from(const Branches& b) {
  Eigen::MatrixXd r(b.l0.size(), 2);
  for (Eigen::Index i = 0; i < b.l0.size(); ++i) {
    const double r1 = logistic(b.l0(i) - b.l1(i));
    r(i, 1) = r1;
    r(i, 0) = logistic(b.l1(i) - b.l0(i));
  }
  return r;
}

}  // namespace

double HazardLikelihood::value_and_gradient(const Eigen::VectorXd& x, const Eigen::MatrixXd* r_in,
                                            Eigen::VectorXd* grad) const {
  const Pass p = forward(x);
  const auto n = static_cast<Eigen::Index>(rows_.subjects());
  const auto n_rows = static_cast<Eigen::Index>(rows_.rows());

  double value = 0.0;
  Eigen::VectorXd c = Eigen::VectorXd::Ones(n);  // hazard multiplier per subject
  Eigen::MatrixXd r;
  double kappa = 0.0;
  if (!layout_.latent()) {
    for (Eigen::Index i = 0; i < n; ++i) value += p.s(i) - p.deta(i);
  } else {
    kappa = x(layout_.kappa());
    const Branches b = branches(p.s, p.nev, p.deta, p.m, kappa);
    if (r_in == nullptr) {
      r = posterior_from(b);
      for (Eigen::Index i = 0; i < n; ++i) {
        const double lo = std::min(b.l0(i), b.l1(i));
        value += lo - std::log1p(std::exp(-std::abs(b.l0(i) - b.l1(i))));
      }
    } else {
      r = *r_in;
      if (r.rows() != n || r.cols() != 2) throw UsageError("responsibilities must be n x 2");
      for (Eigen::Index i = 0; i < n; ++i) value += r(i, 0) * b.l0(i) + r(i, 1) * b.l1(i);
    }
    const double ek = std::exp(kappa);
    for (Eigen::Index i = 0; i < n; ++i) c(i) = r(i, 0) + r(i, 1) * ek;
  }
  if (grad == nullptr) return value;

  grad->setZero(layout_.size());
  Eigen::VectorXd rho(n_rows);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto lo = static_cast<Eigen::Index>(rows_.subject_offset[static_cast<std::size_t>(i)]);
    const auto hi = static_cast<Eigen::Index>(rows_.subject_offset[static_cast<std::size_t>(i) + 1]);
    for (Eigen::Index t = lo; t < hi; ++t)
      rho(t) = c(i) * p.expeta(t) - static_cast<double>(rows_.event[static_cast<std::size_t>(t)]);
  }
  for (Eigen::Index t = 0; t < n_rows; ++t) {
    const int a = rows_.arm[static_cast<std::size_t>(t)];
    if (a >= 0) (*grad)(layout_.theta() + a) += rho(t);
  }
  grad->segment(layout_.w(), layout_.p).noalias() = phi_.transpose() * rho;
  if (layout_.latent()) {
    const double ek = std::exp(kappa);
    double gk = 0.0;
    Eigen::VectorXd prior_resid(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      gk += r(i, 1) * (ek * p.s(i) - p.nev(i));
      prior_resid(i) = logistic(p.m(i)) - r(i, 1);
    }
    (*grad)(layout_.kappa()) = gk;
    grad->segment(layout_.beta(), layout_.q).noalias() = prior_x_->transpose() * prior_resid;
  }
  return value;
}

Eigen::MatrixXd HazardLikelihood::subject_gradients(const Eigen::VectorXd& x, const Eigen::MatrixXd* fixed) const {
  const Pass p = forward(x);
  const auto n = static_cast<Eigen::Index>(rows_.subjects());
  Eigen::MatrixXd r;
  double ek = 1.0;
  if (layout_.latent()) {
    ek = std::exp(x(layout_.kappa()));
    if (fixed) {
      if (fixed->rows() != n || fixed->cols() != 2) throw UsageError("responsibilities must be n x 2");
      r = *fixed;
    } else {
      r = posterior_from(branches(p.s, p.nev, p.deta, p.m, x(layout_.kappa())));
    }
  }
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(n, layout_.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto lo = static_cast<Eigen::Index>(rows_.subject_offset[static_cast<std::size_t>(i)]);
    const auto hi = static_cast<Eigen::Index>(rows_.subject_offset[static_cast<std::size_t>(i) + 1]);
    const double c = layout_.latent() ? r(i, 0) + r(i, 1) * ek : 1.0;
    for (Eigen::Index t = lo; t < hi; ++t) {
      const double rho = c * p.expeta(t) - static_cast<double>(rows_.event[static_cast<std::size_t>(t)]);
      const int a = rows_.arm[static_cast<std::size_t>(t)];
      if (a >= 0) g(i, layout_.theta() + a) += rho;
      g.row(i).segment(layout_.w(), layout_.p) += rho * phi_.row(t);
    }
    if (layout_.latent()) {
      g(i, layout_.kappa()) = r(i, 1) * (ek * p.s(i) - p.nev(i));
      g.row(i).segment(layout_.beta(), layout_.q) = (logistic(p.m(i)) - r(i, 1)) * prior_x_->row(i);
    }
  }
  return g;
}

double HazardLikelihood::nll(const Eigen::VectorXd& x) const { return value_and_gradient(x, nullptr, nullptr); }

double HazardLikelihood::nll_gradient(const Eigen::VectorXd& x, Eigen::VectorXd& grad) const {
  return value_and_gradient(x, nullptr, &grad);
}

double HazardLikelihood::weighted_nll(const Eigen::VectorXd& x, const Eigen::MatrixXd& r) const {
  if (!layout_.latent()) return nll(x);
  return value_and_gradient(x, &r, nullptr);
}

double HazardLikelihood::weighted_nll_gradient(const Eigen::VectorXd& x, const Eigen::MatrixXd& r,
                                               Eigen::VectorXd& grad) const {
  if (!layout_.latent()) return nll_gradient(x, grad);
  return value_and_gradient(x, &r, &grad);
}

Eigen::MatrixXd HazardLikelihood::branch_losses(const Eigen::VectorXd& x) const {
  if (!layout_.latent()) throw UsageError("branch losses need the latent model");
  const Pass p = forward(x);
  const Branches b = branches(p.s, p.nev, p.deta, p.m, x(layout_.kappa()));
  Eigen::MatrixXd out(b.l0.size(), 2);
  out.col(0) = b.l0;
  out.col(1) = b.l1;
  return out;
}

Eigen::MatrixXd HazardLikelihood::posterior(const Eigen::VectorXd& x) const {
  if (!layout_.latent()) throw UsageError("responsibilities need the latent model");
  const Pass p = forward(x);
  return posterior_from(branches(p.s, p.nev, p.deta, p.m, x(layout_.kappa())));
}

double HazardLikelihood::variational_bound(const Eigen::VectorXd& x, const Eigen::MatrixXd& r) const {
  const Eigen::MatrixXd l = branch_losses(x);
  double total = 0.0;
  for (Eigen::Index i = 0; i < l.rows(); ++i)
    for (int z = 0; z < 2; ++z)
      if (r(i, z) > 0.0) total += r(i, z) * (l(i, z) + std::log(r(i, z)));
  return total;
}

Eigen::MatrixXd HazardLikelihood::hessian_impl(const Eigen::VectorXd& x, const Eigen::MatrixXd* r_in,
                                               bool marginal) const {
  const Pass p = forward(x);
  const auto n = static_cast<Eigen::Index>(rows_.subjects());
  const auto n_rows = static_cast<Eigen::Index>(rows_.rows());
  const Eigen::Index k = layout_.k;
  const Eigen::Index lin = layout_.linear_size();

  Eigen::MatrixXd r;
  Eigen::VectorXd c = Eigen::VectorXd::Ones(n);
  double kappa = 0.0, ek = 1.0;
  if (layout_.latent()) {
    kappa = x(layout_.kappa());
    ek = std::exp(kappa);
    r = r_in != nullptr ? *r_in : posterior_from(branches(p.s, p.nev, p.deta, p.m, kappa));
    for (Eigen::Index i = 0; i < n; ++i) c(i) = r(i, 0) + r(i, 1) * ek;
  }

  Eigen::VectorXd omega(n_rows);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto lo = static_cast<Eigen::Index>(rows_.subject_offset[static_cast<std::size_t>(i)]);
    const auto hi = static_cast<Eigen::Index>(rows_.subject_offset[static_cast<std::size_t>(i) + 1]);
    omega.segment(lo, hi - lo) = c(i) * p.expeta.segment(lo, hi - lo);
  }

  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(layout_.size(), layout_.size());
  const Eigen::MatrixXd weighted = phi_.array().colwise() * omega.array().sqrt();
  h.block(k, k, layout_.p, layout_.p).selfadjointView<Eigen::Lower>().rankUpdate(weighted.transpose());
  h.block(k, k, layout_.p, layout_.p).triangularView<Eigen::StrictlyUpper>() =
      h.block(k, k, layout_.p, layout_.p).transpose();
  for (Eigen::Index t = 0; t < n_rows; ++t) {
    const int a = rows_.arm[static_cast<std::size_t>(t)];
    if (a < 0) continue;
    h(a, a) += omega(t);
    h.block(a, k, 1, layout_.p) += omega(t) * phi_.row(t);
  }
  h.block(k, 0, layout_.p, k) = h.block(0, k, k, layout_.p).transpose();
  if (!layout_.latent()) return h;

  // Per-subject sums s_i = sum_t exp(eta_t) [A_t; phi_t].
  Eigen::MatrixXd s_lin = Eigen::MatrixXd::Zero(n, lin);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto lo = static_cast<Eigen::Index>(rows_.subject_offset[static_cast<std::size_t>(i)]);
    const auto hi = static_cast<Eigen::Index>(rows_.subject_offset[static_cast<std::size_t>(i) + 1]);
    s_lin.block(i, k, 1, layout_.p).noalias() =
        p.expeta.segment(lo, hi - lo).transpose() * phi_.middleRows(lo, hi - lo);
    for (Eigen::Index t = lo; t < hi; ++t) {
      const int a = rows_.arm[static_cast<std::size_t>(t)];
      if (a >= 0) s_lin(i, a) += p.expeta(t);
    }
  }
  const Eigen::Index kk = layout_.kappa();
  const Eigen::Index bb = layout_.beta();
  const Eigen::Index q = layout_.q;
  Eigen::VectorXd hk_lin = Eigen::VectorXd::Zero(lin);
  double hkk = 0.0;
  Eigen::VectorXd prior_w(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    hk_lin += (r(i, 1) * ek) * s_lin.row(i).transpose();
    hkk += r(i, 1) * ek * p.s(i);
    const double sg = logistic(p.m(i));
    prior_w(i) = sg * (1.0 - sg);
  }
  h.block(kk, 0, 1, lin) = hk_lin.transpose();
  h.block(0, kk, lin, 1) = hk_lin;
  h(kk, kk) = hkk;
  h.block(bb, bb, q, q).noalias() = prior_x_->transpose() * prior_w.asDiagonal() * (*prior_x_);

  if (marginal) {
    Eigen::MatrixXd d(n, layout_.size());
    d.leftCols(lin) = (ek - 1.0) * s_lin;
    for (Eigen::Index i = 0; i < n; ++i) d(i, kk) = ek * p.s(i) - p.nev(i);
    d.rightCols(q) = -(*prior_x_);
    Eigen::VectorXd wgt(n);
    for (Eigen::Index i = 0; i < n; ++i) wgt(i) = std::sqrt(std::max(0.0, r(i, 0) * r(i, 1)));
    const Eigen::MatrixXd dw = d.array().colwise() * wgt.array();
    h.noalias() -= dw.transpose() * dw;
  }
  return h;
}

Eigen::MatrixXd HazardLikelihood::hessian(const Eigen::VectorXd& x) const {
  return hessian_impl(x, nullptr, true);
}

Eigen::MatrixXd HazardLikelihood::weighted_hessian(const Eigen::VectorXd& x, const Eigen::MatrixXd& r) const {
  if (!layout_.latent()) return hessian(x);
  return hessian_impl(x, &r, false);
}

}  // namespace hazardml
