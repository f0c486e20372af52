#include "hazardml/crossfit_nuisance.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "hazardml/error.hpp"
#include "hazardml/model_evidence.hpp"
#include "hazardml/parallel.hpp"
#include "hazardml/rng.hpp"

namespace hazardml {
namespace {

constexpr std::uint32_t kFoldProcess = 7;

std::size_t count_events(const RowTable& rows) {
  return static_cast<std::size_t>(std::count(rows.event.begin(), rows.event.end(), 1));
}

}  // namespace

std::vector<std::size_t> FoldPlan::fold(int m) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < assignment.size(); ++i)
    if (assignment[i] == m) out.push_back(i);
  return out;
}

std::vector<std::size_t> FoldPlan::train(int m) const {
  const int v = (m + 1) % m_count;
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < assignment.size(); ++i)
    if (assignment[i] != m && assignment[i] != v) out.push_back(i);
  return out;
}

FoldPlan make_folds(std::size_t n_subjects, int m_count, std::uint64_t seed) {
  if (m_count < 3) throw UsageError("cross-fitting needs at least 3 folds (train, validation, holdout)");
  if (static_cast<std::size_t>(m_count) > n_subjects)
    throw UsageError("more folds than subjects");
  std::vector<std::size_t> perm(n_subjects);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  PhiloxStream rng(seed, 0, kFoldProcess);
  for (std::size_t i = n_subjects; i-- > 1;) {
    const auto j = static_cast<std::size_t>(rng.uniform() * static_cast<double>(i + 1));
    std::swap(perm[i], perm[std::min(j, i)]);
  }
  FoldPlan plan;
  plan.m_count = m_count;
  plan.assignment.assign(n_subjects, 0);
  for (std::size_t pos = 0; pos < n_subjects; ++pos)
    plan.assignment[perm[pos]] = static_cast<int>(pos % static_cast<std::size_t>(m_count));
  return plan;
}

CrossfitData::CrossfitData(const PanelDataset& data, const ModelSpec& model) : ds(&data), spec(model) {
  rows = build_rows(data);
  spec.validate(static_cast<int>(rows.inputs.cols()));
  combined = build_design(spec.kernels, rows.inputs, spec.ichol_tol, spec.max_rank);
  if (spec.latent) prior_x = baseline_design(data, spec.prior_covariates);
}

Eigen::MatrixXd CrossfitData::gather(const Eigen::MatrixXd& m, const std::vector<std::size_t>& subjects) const {
  Eigen::Index total = 0;
  for (std::size_t s : subjects)
    total += static_cast<Eigen::Index>(rows.subject_offset[s + 1] - rows.subject_offset[s]);
  Eigen::MatrixXd out(total, m.cols());
  Eigen::Index at = 0;
  for (std::size_t s : subjects) {
    const auto lo = static_cast<Eigen::Index>(rows.subject_offset[s]);
    const auto len = static_cast<Eigen::Index>(rows.subject_offset[s + 1]) - lo;
    out.middleRows(at, len) = m.middleRows(lo, len);
    at += len;
  }
  return out;
}

Eigen::VectorXd CrossfitData::gather(const Eigen::VectorXd& v, const std::vector<std::size_t>& subjects) const {
  return gather(Eigen::MatrixXd(v), subjects).col(0);
}

RowTable CrossfitData::table(const std::vector<std::size_t>& subjects) const { return build_rows(*ds, subjects); }

Eigen::MatrixXd CrossfitData::prior(const std::vector<std::size_t>& subjects) const {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(subjects.size()), prior_x.cols());
  for (std::size_t i = 0; i < subjects.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = prior_x.row(static_cast<Eigen::Index>(subjects[i]));
  return out;
}

NuisanceFold fit_fold_ml(const CrossfitData& data, const FoldPlan& plan, int m, const FitOptions& options) {
  if (m < 0 || m >= plan.m_count) throw UsageError("fold index out of range");
  NuisanceFold fold;
  fold.m = m;
  fold.train = plan.train(m);
  fold.validation = plan.validation(m);
  fold.holdout = plan.holdout(m);
  const RowTable rows = data.table(fold.train);
  if (count_events(rows) == 0)
    throw DataError("no events in training split of fold " + std::to_string(m));
  Eigen::MatrixXd px;
  if (data.spec.latent) px = data.prior(fold.train);
  fold.fit = fit_model(rows, data.spec, options, data.spec.latent ? &px : nullptr);
  fold.theta = fold.fit->theta();
  fold.kappa = fold.fit->kappa();
  fold.beta = fold.fit->beta();
  fold.f_hat = fold.fit->f();
  fold.f_rows = fold.f_hat.evaluate(data.rows.inputs);
  return fold;
}

Eigen::VectorXd fold_point(const CrossfitData& data, const NuisanceFold& fold) {
  ParamLayout lay;
  lay.k = data.rows.k_count;
  lay.p = data.combined.width();
  lay.q = data.spec.latent ? data.prior_x.cols() : 0;
  Eigen::VectorXd x = Eigen::VectorXd::Zero(lay.size());
  x.head(lay.k) = fold.theta;
  if (lay.latent()) {
    x(lay.kappa()) = fold.kappa;
    x.segment(lay.beta(), lay.q) = fold.beta;
  }
  return x;
}

HessianBlocks hessian_blocks(const CrossfitData& data, const NuisanceFold& fold,
                             const std::vector<std::size_t>& subjects) {
  if (subjects.empty()) throw UsageError("Hessian blocks need at least one subject");
  const RowTable rows = data.table(subjects);
  const Eigen::MatrixXd phi = data.gather(data.combined.phi, subjects);
  const Eigen::VectorXd offset = data.gather(fold.f_rows, subjects);
  Eigen::MatrixXd px;
  if (data.spec.latent) px = data.prior(subjects);
  const HazardLikelihood lik(rows, phi, data.spec.latent ? &px : nullptr, &offset);
  const Eigen::MatrixXd h = lik.hessian(fold_point(data, fold)) / static_cast<double>(subjects.size());
  const Eigen::Index k = rows.k_count;
  const Eigen::Index rest = h.rows() - k;
  HessianBlocks b;
  b.tt = h.topLeftCorner(k, k);
  b.tf = h.topRightCorner(k, rest);
  b.ff = h.bottomRightCorner(rest, rest);
  return b;
}

void attach_hessians(const CrossfitData& data, NuisanceFold& fold) {
  fold.h_train = hessian_blocks(data, fold, fold.train);
  fold.h_val = hessian_blocks(data, fold, fold.validation);
}

Eigen::MatrixXd correction_matrix(const HessianBlocks& h, double zeta) {
  if (!(zeta >= 0.0)) throw UsageError("zeta must be nonnegative");
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(h.ff);
  if (es.info() != Eigen::Success) throw NumericalError("eigendecomposition of H_ff failed");
  const Eigen::VectorXd shifted = es.eigenvalues().array() + zeta;
  const double scale = std::max(es.eigenvalues().cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
  if (shifted.minCoeff() <= 1e-12 * scale)
    throw NumericalError("H_ff + zeta is singular at zeta = " + std::to_string(zeta));
  const Eigen::MatrixXd& v = es.eigenvectors();
  return ((h.tf * v).array().rowwise() / shifted.transpose().array()).matrix() * v.transpose();
}

double cverr_h(const std::vector<NuisanceFold>& folds, double zeta) {
  double total = 0.0;
  for (const auto& f : folds) {
    if (!f.h_train || !f.h_val) throw UsageError("fold is missing Hessian blocks");
    const Eigen::MatrixXd c = correction_matrix(*f.h_train, zeta);
    total += (f.h_val->tf - c * f.h_val->ff).squaredNorm();
  }
  return total;
}

ZetaCurve tune_zeta_h(const std::vector<NuisanceFold>& folds, const std::vector<double>& grid) {
  if (grid.empty()) throw UsageError("zeta grid is empty");
  ZetaCurve c;
  c.grid = grid;
  std::sort(c.grid.begin(), c.grid.end());
  c.value.assign(c.grid.size(), std::numeric_limits<double>::quiet_NaN());
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < c.grid.size(); ++i) {
    try {
      c.value[i] = cverr_h(folds, c.grid[i]);
    } catch (const NumericalError&) {
      continue;
    }
    if (!best || c.value[i] < c.value[*best]) best = i;
  }
  if (!best) throw NumericalError("CVErr_H is undefined at every zeta in the grid");
  c.best = c.grid[*best];
  return c;
}

LogisticObjective::LogisticObjective(const RowTable& rows, const Eigen::MatrixXd& phi, int arm, double zeta)
    : rows_(rows), phi_(phi), zeta_(zeta), n_(static_cast<double>(rows.subjects())) {
  if (static_cast<std::size_t>(phi.rows()) != rows.rows()) throw UsageError("design rows do not match the row table");
  if (arm < 0 || arm >= rows.k_count) throw UsageError("arm index out of range");
  if (!(zeta >= 0.0)) throw UsageError("zeta must be nonnegative");
  const auto n_rows = static_cast<Eigen::Index>(rows.rows());
  y_.setZero(n_rows);
  weight_.setZero(n_rows);
  for (Eigen::Index r = 0; r < n_rows; ++r) {
    const int a = rows.arm[static_cast<std::size_t>(r)];
    if (a == arm) y_(r) = 1.0;
    if (a == arm || a < 0) weight_(r) = rows.dt / n_;
  }
}

Eigen::VectorXd LogisticObjective::penalty_mask() const {
  Eigen::VectorXd m = Eigen::VectorXd::Ones(phi_.cols());
  m(phi_.cols() - 1) = 0.0;
  return m;
}

double LogisticObjective::value(const Eigen::VectorXd& u) const {
  const Eigen::VectorXd g = phi_ * u;
  double v = 0.0;
  for (Eigen::Index r = 0; r < g.size(); ++r)
    if (weight_(r) > 0.0) v += weight_(r) * (y_(r) > 0.5 ? softplus(-g(r)) : softplus(g(r)));
  return v + zeta_ * (penalty_mask().array() * u.array().square()).sum();
}

double LogisticObjective::value_gradient(const Eigen::VectorXd& u, Eigen::VectorXd& grad) const {
  const Eigen::VectorXd g = phi_ * u;
  Eigen::VectorXd d(g.size());
  for (Eigen::Index r = 0; r < g.size(); ++r) d(r) = weight_(r) * (logistic(g(r)) - y_(r));
  grad.noalias() = phi_.transpose() * d;
  grad.array() += 2.0 * zeta_ * penalty_mask().array() * u.array();
  return value(u);
}

Eigen::MatrixXd LogisticObjective::hessian(const Eigen::VectorXd& u) const {
  const Eigen::VectorXd g = phi_ * u;
  Eigen::VectorXd w(g.size());
  for (Eigen::Index r = 0; r < g.size(); ++r) {
    const double s = logistic(g(r));
    w(r) = std::sqrt(weight_(r) * s * (1.0 - s));
  }
  const Eigen::MatrixXd scaled = phi_.array().colwise() * w.array();
  Eigen::MatrixXd h = scaled.transpose() * scaled;
  h.diagonal().array() += 2.0 * zeta_ * penalty_mask().array();
  return h;
}

double LogisticObjective::total_loss(const Eigen::VectorXd& u) const {
  return n_ * (value(u) - zeta_ * (penalty_mask().array() * u.array().square()).sum());
}

GFit fit_g_k(const RowTable& rows, const std::vector<KernelSpec>& kernels, int arm, double zeta,
             const OptimizerConfig& cfg, double ichol_tol) {
  if (!(zeta > 0.0)) throw UsageError("zeta_g must be positive");
  double treated = 0.0, untreated = 0.0;
  for (int a : rows.arm) {
    if (a == arm) treated += 1.0;
    if (a < 0) untreated += 1.0;
  }
  if (treated == 0.0 || untreated == 0.0)
    throw DataError("positivity violation: arm " + std::to_string(arm + 1) + " has " +
                    (treated == 0.0 ? "no treated" : "no untreated") + " person-time");
  GFit out;
  out.design = build_design(kernels, rows.inputs, ichol_tol);
  const LogisticObjective obj(rows, out.design.phi, arm, zeta);
  Eigen::VectorXd u0 = Eigen::VectorXd::Zero(out.design.width());
  u0(out.design.bias_column()) = std::log(treated / untreated);
  auto f = [&](const Eigen::VectorXd& u, Eigen::VectorXd& g) { return obj.value_gradient(u, g); };
  const OptimizerResult res = minimize(f, u0, cfg);
  out.u = res.x;
  out.converged = res.converged;
  out.objective = res.value;
  out.g = expansion_from_design(out.design, out.u);

  // Laplace evidence of exp(-n * objective): the prior precision on kernel coordinates is 2 n zeta.
  const double n = obj.subjects();
  const Eigen::VectorXd mask = obj.penalty_mask();
  const double prec = 2.0 * n * zeta;
  double log_lambda = 0.0;
  for (const auto& b : out.design.bases) log_lambda += 0.5 * static_cast<double>(b.rank()) * std::log(prec);
  const double penalty = n * zeta * (mask.array() * out.u.array().square()).sum();
  const EvidenceTerms t = laplace_from_parts(obj.total_loss(out.u), penalty, log_lambda, n * obj.hessian(out.u));
  out.log_bme = t.log_bme;
  // Intercept-only model: b = log(treated / untreated) in closed form, no kernel coordinates.
  const double b = std::log(treated / untreated);
  const double s = logistic(b);
  const double loss = rows.dt * (treated * softplus(-b) + untreated * softplus(b));
  const double curvature = rows.dt * (treated + untreated) * s * (1.0 - s);
  out.log_bme_trivial = -loss - 0.5 * std::log(curvature);
  out.trivial = out.log_bme < out.log_bme_trivial;
  return out;
}

double g_balance(const RowTable& rows, const Eigen::VectorXd& g, int arm, std::size_t* clipped) {
  double total = 0.0;
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    const int a = rows.arm[r];
    if (a != arm && a >= 0) continue;
    double v = g(static_cast<Eigen::Index>(r));
    if (std::abs(v) > kGClip) {
      v = std::copysign(kGClip, v);
      if (clipped != nullptr) ++*clipped;
    }
    total += (a == arm ? std::exp(-v) - 1.0 : std::exp(v) - 1.0) * rows.dt;
  }
  return total;
}

ZetaGResult tune_zeta_g(const CrossfitData& data, const FoldPlan& plan, const std::vector<KernelSpec>& kernels,
                        int arm, const std::vector<double>& grid_in, const OptimizerConfig& cfg, int threads) {
  if (grid_in.empty()) throw UsageError("zeta grid is empty");
  std::vector<double> grid = grid_in;
  std::sort(grid.begin(), grid.end());
  std::vector<RowTable> train, val;
  for (int m = 0; m < plan.m_count; ++m) {
    train.push_back(data.table(plan.train(m)));
    val.push_back(data.table(plan.validation(m)));
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  ZetaGResult out;
  out.cverr.grid = out.log_bme.grid = grid;
  out.cverr.value.assign(grid.size(), nan);
  out.log_bme.value.assign(grid.size(), nan);
  std::vector<char> trivial(grid.size(), 0);
  std::vector<double> trivial_bme(grid.size(), nan);
  parallel_for(grid.size(), threads, [&](std::size_t i) {
    try {
      double err = 0.0;
      for (int m = 0; m < plan.m_count; ++m) {
        const GFit fit = fit_g_k(train[static_cast<std::size_t>(m)], kernels, arm, grid[i], cfg, data.spec.ichol_tol);
        const Eigen::VectorXd g = fit.g.evaluate(val[static_cast<std::size_t>(m)].inputs);
        const double b = g_balance(val[static_cast<std::size_t>(m)], g, arm);
        err += b * b;
      }
      out.cverr.value[i] = err;
      const GFit full = fit_g_k(data.rows, kernels, arm, grid[i], cfg, data.spec.ichol_tol);
      out.log_bme.value[i] = full.log_bme;
      trivial_bme[i] = full.log_bme_trivial;
    } catch (const NumericalError&) {
    }
  });
  std::optional<std::size_t> best_cv, best_bme;
  for (std::size_t i = 0; i < grid.size(); ++i)
    if (std::isfinite(out.log_bme.value[i]) && (!best_bme || out.log_bme.value[i] > out.log_bme.value[*best_bme]))
      best_bme = i;
  if (!best_bme) throw NumericalError("every zeta_g grid point failed");
  // Strong smoothing drives g to the intercept-only fit, which balances every
  // split and so minimizes CVErr_g trivially. Those points are screened out by
  // evidence: keep only grid points closer to the best log-BME than to the
  // intercept-only one.
  const double cut = 0.5 * (out.log_bme.value[*best_bme] + trivial_bme[*best_bme]);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    trivial[i] = !(out.log_bme.value[i] >= cut);
    if (!trivial[i] && std::isfinite(out.cverr.value[i]) &&
        (!best_cv || out.cverr.value[i] < out.cverr.value[*best_cv]))
      best_cv = i;
  }
  if (!best_cv) best_cv = best_bme;
  out.cverr.best = out.zeta_cv = grid[*best_cv];
  out.log_bme.best = out.zeta_bme = grid[*best_bme];
  out.trivial.assign(trivial.begin(), trivial.end());
  return out;
}

void attach_g(const CrossfitData& data, NuisanceFold& fold, const std::vector<KernelSpec>& kernels,
              const std::vector<double>& zeta_per_arm, const OptimizerConfig& cfg) {
  const int k = data.rows.k_count;
  if (static_cast<int>(zeta_per_arm.size()) != k) throw UsageError("need one zeta_g per arm");
  const RowTable rows = data.table(fold.train);
  fold.g_hat.clear();
  fold.g_rows.clear();
  for (int a = 0; a < k; ++a) {
    const GFit fit = fit_g_k(rows, kernels, a, zeta_per_arm[static_cast<std::size_t>(a)], cfg, data.spec.ichol_tol);
    fold.g_hat.push_back(fit.g);
    fold.g_rows.push_back(fit.g.evaluate(data.rows.inputs));
  }
}

std::vector<KernelSpec> default_g_kernels(const PanelDataset& ds, const ModelSpec& f_model) {
  double sigma = 1.0;
  for (const auto& k : f_model.kernels)
    if (k.kind == KernelKind::gaussian && k.dimension() == 1) {
      sigma = k.bandwidth;
      break;
    }
  std::vector<KernelSpec> out;
  for (int j = 0; j < ds.d_count; ++j) {
    KernelSpec s;
    s.kind = KernelKind::gaussian;
    s.inputs = {j};
    s.bandwidth = sigma;
    out.push_back(s);
  }
  return out;
}

}  // namespace hazardml
