#include "hazardml/model_evidence.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "hazardml/error.hpp"
#include "hazardml/parallel.hpp"

namespace hazardml {

EvidenceTerms laplace_from_parts(double nll, double penalty, double log_lambda_term,
                                 const Eigen::MatrixXd& penalized_hessian) {
  EvidenceTerms t;
  t.nll = nll;
  t.penalty = penalty;
  t.log_lambda_term = log_lambda_term;
  Eigen::LLT<Eigen::MatrixXd> llt(penalized_hessian);
  if (llt.info() != Eigen::Success)
    throw NumericalError("penalized Hessian is not positive definite (unconverged fit or singular model)");
  double logdet = 0.0;
  const auto& l = llt.matrixL();
  for (Eigen::Index i = 0; i < penalized_hessian.rows(); ++i) {
    const double d = l(i, i);
    if (!(d > 0.0)) throw NumericalError("penalized Hessian is not positive definite");
    logdet += 2.0 * std::log(d);
  }
  t.half_logdet = 0.5 * logdet;
  t.log_bme = -nll - penalty + log_lambda_term - t.half_logdet;
  if (!std::isfinite(t.log_bme)) throw NumericalError("log-BME is not finite");
  return t;
}

EvidenceTerms laplace_log_bme(const RowTable& rows, const FittedModel& fitted, const Eigen::MatrixXd* prior_x) {
  if (fitted.spec.latent && prior_x == nullptr) throw UsageError("latent evidence needs the prior design");
  HazardLikelihood lik(rows, fitted.design.phi, fitted.spec.latent ? prior_x : nullptr);
  Eigen::MatrixXd h = lik.hessian(fitted.x);
  const ParamLayout& lay = fitted.layout;
  h.diagonal().segment(lay.w(), lay.p) += fitted.penalty_weights;
  double log_lambda = 0.0;
  for (const auto& b : fitted.design.bases)
    if (b.spec.lambda > 0.0) log_lambda += 0.5 * static_cast<double>(b.rank()) * std::log(b.spec.lambda);
  return laplace_from_parts(lik.nll(fitted.x), ridge_penalty(fitted.penalty_weights, fitted.w()), log_lambda, h);
}

std::vector<double> log_grid(double lo, double hi) {
  if (!(lo > 0.0) || !(hi >= lo)) throw UsageError("log grid needs 0 < lo <= hi");
  static constexpr double kMantissa[] = {1.0, 1.5, 2.0, 3.0, 5.0, 7.0};
  std::vector<double> out;
  const int e0 = static_cast<int>(std::floor(std::log10(lo))) - 1;
  const int e1 = static_cast<int>(std::ceil(std::log10(hi))) + 1;
  for (int e = e0; e <= e1; ++e)
    for (double m : kMantissa) {
      const double v = m * std::pow(10.0, e);
      if (v >= lo * (1 - 1e-12) && v <= hi * (1 + 1e-12)) out.push_back(v);
    }
  return out;
}

std::string HyperPoint::describe() const {
  std::ostringstream out;
  bool first = true;
  auto put = [&](const std::string& key, const std::optional<double>& v) {
    if (!v) return;
    if (!first) out << ' ';
    out << key << '=' << *v;
    first = false;
  };
  put("lambda_linear", linear_lambda);
  for (int d = 0; d < 3; ++d) {
    put("lambda_" + std::to_string(d + 1), gauss_lambda[d]);
    put("sigma_" + std::to_string(d + 1), gauss_sigma[d]);
  }
  return first ? std::string("fixed") : out.str();
}

ModelSpec with_hyper(ModelSpec spec, const HyperPoint& h) {
  for (auto& k : spec.kernels) {
    if (k.kind == KernelKind::linear) {
      if (h.linear_lambda) k.lambda = *h.linear_lambda;
    } else {
      const int d = k.dimension() - 1;
      if (h.gauss_lambda[d]) k.lambda = *h.gauss_lambda[d];
      if (h.gauss_sigma[d]) k.bandwidth = *h.gauss_sigma[d];
    }
  }
  return spec;
}

std::vector<HyperPoint> enumerate_grid(const HyperGrid& grid, const ModelSpec& spec) {
  bool has_linear = false;
  std::array<bool, 3> has_gauss{};
  for (const auto& k : spec.kernels) {
    if (k.kind == KernelKind::linear)
      has_linear = true;
    else
      has_gauss[static_cast<std::size_t>(k.dimension() - 1)] = true;
  }
  auto sorted = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    return v;
  };
  std::vector<HyperPoint> points{HyperPoint{}};
  auto expand = [&](const std::vector<double>& values, auto setter) {
    if (values.empty()) return;
    std::vector<HyperPoint> next;
    for (const auto& p : points)
      for (double v : sorted(values)) {
        HyperPoint q = p;
        setter(q, v);
        next.push_back(q);
      }
    points = std::move(next);
  };
  if (has_linear) expand(grid.linear_lambda, [](HyperPoint& p, double v) { p.linear_lambda = v; });
  for (std::size_t d = 0; d < 3; ++d) {
    if (!has_gauss[d]) continue;
    expand(grid.gauss_lambda[d], [d](HyperPoint& p, double v) { p.gauss_lambda[d] = v; });
    expand(grid.gauss_sigma[d], [d](HyperPoint& p, double v) { p.gauss_sigma[d] = v; });
  }
  std::sort(points.begin(), points.end());
  return points;
}

SingleEvidence evaluate_evidence(const PanelDataset& ds, const ModelSpec& spec, const FitOptions& options) {
  const RowTable rows = build_rows(ds);
  Eigen::MatrixXd prior_x;
  if (spec.latent) prior_x = baseline_design(ds, spec.prior_covariates);
  SingleEvidence out;
  out.fitted = fit_model(rows, spec, options, spec.latent ? &prior_x : nullptr);
  out.terms = laplace_log_bme(rows, out.fitted, spec.latent ? &prior_x : nullptr);
  return out;
}

EvidenceReport grid_search(const PanelDataset& ds, const ModelSpec& spec, const HyperGrid& grid,
                           const FitOptions& options, int threads) {
  const RowTable rows = build_rows(ds);
  Eigen::MatrixXd prior_x;
  if (spec.latent) prior_x = baseline_design(ds, spec.prior_covariates);
  const Eigen::MatrixXd* px = spec.latent ? &prior_x : nullptr;

  const std::vector<HyperPoint> points = enumerate_grid(grid, spec);
  std::vector<GridEntry> entries(points.size());
  std::vector<std::optional<FittedModel>> fits(points.size());
  parallel_for(points.size(), threads, [&](std::size_t g) {
    entries[g].point = points[g];
    try {
      FittedModel fm = fit_model(rows, with_hyper(spec, points[g]), options, px);
      entries[g].terms = laplace_log_bme(rows, fm, px);
      fits[g] = std::move(fm);
    } catch (const Error& e) {
      entries[g].error = e.what();
    }
  });

  std::optional<std::size_t> best;
  for (std::size_t g = 0; g < entries.size(); ++g)
    if (entries[g].terms && (!best || entries[g].terms->log_bme > entries[*best].terms->log_bme)) best = g;
  if (!best) {
    std::string why = entries.empty() ? std::string("empty grid") : entries.front().error;
    throw NumericalError("no grid point produced a finite evidence (" + why + ")");
  }
  EvidenceReport rep;
  rep.hyper = points[*best];
  rep.terms = *entries[*best].terms;
  rep.fitted = std::move(*fits[*best]);
  rep.entries = std::move(entries);
  return rep;
}

AuditResult time_homogeneity_audit(const PanelDataset& ds, const ModelSpec& spec, const HyperGrid& grid,
                                   const FitOptions& options, int threads, Eigen::Index time_max_rank) {
  const int time_col = ds.d_count;
  for (const auto& k : spec.kernels)
    for (int c : k.inputs)
      if (c == time_col) throw UsageError("audit base model must not already use elapsed time");
  ModelSpec augmented = spec;
  KernelSpec tk;
  tk.kind = KernelKind::gaussian;
  tk.inputs = {time_col};
  tk.max_rank = time_max_rank;
  // Defaults follow the first 1D gaussian so shared hyperparameters stay shared.
  for (const auto& k : spec.kernels)
    if (k.kind == KernelKind::gaussian && k.dimension() == 1) {
      tk.bandwidth = k.bandwidth;
      tk.lambda = k.lambda;
      break;
    }
  augmented.kernels.push_back(tk);

  AuditResult out;
  out.base = grid_search(ds, spec, grid, options, threads);
  out.augmented = grid_search(ds, augmented, grid, options, threads);
  out.log_bayes_factor = out.augmented.terms.log_bme - out.base.terms.log_bme;
  out.violated = out.log_bayes_factor > 0.0;
  return out;
}

}  // namespace hazardml
