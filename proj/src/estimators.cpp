#include "hazardml/estimators.hpp"

#include <algorithm>
#include <cmath>

#include "hazardml/error.hpp"
#include "hazardml/parallel.hpp"

namespace hazardml {

std::string estimator_name(Estimator e) {
  switch (e) {
    case Estimator::naive_ml: return "naive_ml";
    case Estimator::debias_h: return "debias_H";
    case Estimator::debias_g: return "debias_g";
    case Estimator::debias_latent: return "debias_latent";
  }
  return "?";
}

Estimator parse_estimator(const std::string& name) {
  std::string s = name;
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (s == "naive_ml" || s == "ml") return Estimator::naive_ml;
  if (s == "debias_h" || s == "h") return Estimator::debias_h;
  if (s == "debias_g" || s == "g") return Estimator::debias_g;
  if (s == "debias_latent" || s == "latent") return Estimator::debias_latent;
  throw UsageError("unknown estimator '" + name + "' (naive_ml, debias_H, debias_g, debias_latent)");
}

double ZetaSchedule::at(std::size_t n) const {
  if (!(c > 0.0)) throw UsageError("zeta schedule constant must be positive");
  return c * std::pow(static_cast<double>(n), -alpha);
}

namespace {

void check_route(const ModelSpec& spec, Estimator which) {
  if (which == Estimator::debias_latent && !spec.latent)
    throw UsageError("debias_latent needs a model with a latent block");
  if ((which == Estimator::debias_h || which == Estimator::debias_g) && spec.latent)
    throw UsageError(estimator_name(which) + " needs a model without a latent block (use debias_latent)");
}

std::vector<Eigen::MatrixXd> corrections(const NuisanceBundle& b) {
  if (!b.zeta_h) throw UsageError("nuisances were estimated without Hessian blocks");
  std::vector<Eigen::MatrixXd> out;
  for (const auto& f : b.folds) {
    if (!f.h_train) throw UsageError("fold is missing Hessian blocks");
    out.push_back(correction_matrix(*f.h_train, *b.zeta_h));
  }
  return out;
}

}  // namespace

NuisanceBundle estimate_nuisances(const CrossfitData& data, const EstimatorConfig& cfg, bool need_h, bool need_g) {
  NuisanceBundle b;
  b.plan = make_folds(data.rows.subjects(), cfg.folds, cfg.seed);
  b.folds.resize(static_cast<std::size_t>(cfg.folds));
  parallel_for(b.folds.size(), cfg.threads, [&](std::size_t m) {
    b.folds[m] = fit_fold_ml(data, b.plan, static_cast<int>(m), cfg.fit);
    if (need_h) attach_hessians(data, b.folds[m]);
  });
  if (need_h) {
    if (cfg.zeta_h) {
      b.zeta_h = *cfg.zeta_h;
    } else if (cfg.zeta_schedule) {
      b.zeta_h = cfg.zeta_schedule->at(data.rows.subjects());
    } else {
      b.zeta_h_curve = tune_zeta_h(b.folds, cfg.zeta_h_grid);
      b.zeta_h = b.zeta_h_curve->best;
    }
  }
  if (need_g) {
    const int k = data.rows.k_count;
    const auto kernels = cfg.g_kernels.empty() ? default_g_kernels(*data.ds, data.spec) : cfg.g_kernels;
    if (!cfg.zeta_g.empty()) {
      if (static_cast<int>(cfg.zeta_g.size()) == k)
        b.zeta_g = cfg.zeta_g;
      else if (cfg.zeta_g.size() == 1)
        b.zeta_g.assign(static_cast<std::size_t>(k), cfg.zeta_g.front());
      else
        throw UsageError("give one zeta_g, or one per arm");
    } else {
      for (int a = 0; a < k; ++a) {
        b.zeta_g_tuning.push_back(tune_zeta_g(data, b.plan, kernels, a, cfg.zeta_g_grid, cfg.fit.optimizer, cfg.threads));
        b.zeta_g.push_back(b.zeta_g_tuning.back().zeta_cv);
      }
    }
    parallel_for(b.folds.size(), cfg.threads,
                 [&](std::size_t m) { attach_g(data, b.folds[m], kernels, b.zeta_g, cfg.fit.optimizer); });
  }
  return b;
}

EstimateReport debias(const CrossfitData& data, const NuisanceBundle& bundle, Estimator which,
                      const EstimatorConfig& cfg, const std::optional<Eigen::VectorXd>& theta_star) {
  check_route(data.spec, which);
  EstimateReport rep;
  rep.estimator = which;
  switch (which) {
    case Estimator::debias_g: {
      const LinearScoreSystem sys = assemble_g_system(data, bundle.folds);
      rep.estimate = sandwich_se(sys, sys.solve(), theta_star);
      rep.diagnostics = sys.diagnostics;
      rep.g_clipped = sys.clipped;
      rep.zeta_g = bundle.zeta_g;
      break;
    }
    case Estimator::debias_h: {
      const LinearScoreSystem sys = assemble_h_system(data, bundle.folds, corrections(bundle));
      rep.estimate = sandwich_se(sys, sys.solve(), theta_star);
      rep.diagnostics = sys.diagnostics;
      rep.zeta_h = bundle.zeta_h;
      break;
    }
    case Estimator::debias_latent: {
      Eigen::VectorXd theta0 = Eigen::VectorXd::Zero(data.rows.k_count);
      for (const auto& f : bundle.folds) theta0 += f.theta;
      theta0 /= static_cast<double>(bundle.folds.size());
      const LatentScoreSystem sys(data, bundle.folds, corrections(bundle), theta0, cfg.full_newton,
                                    cfg.freeze_responsibilities);
      rep.estimate = sandwich_se(sys, sys.solve(), theta_star);
      rep.zeta_h = bundle.zeta_h;
      break;
    }
    case Estimator::naive_ml:
      throw UsageError("naive_ml does not use cross-fitted nuisances");
  }
  return rep;
}

EstimateReport naive_ml(const PanelDataset& ds, const EstimatorConfig& cfg,
                        const std::optional<Eigen::VectorXd>& theta_star) {
  const RowTable rows = build_rows(ds);
  Eigen::MatrixXd px;
  if (cfg.spec.latent) px = baseline_design(ds, cfg.spec.prior_covariates);
  const Eigen::MatrixXd* prior = cfg.spec.latent ? &px : nullptr;
  const FittedModel fm = fit_model(rows, cfg.spec, cfg.fit, prior);
  const HazardLikelihood lik(rows, fm.design.phi, prior);
  Eigen::MatrixXd h = lik.hessian(fm.x);
  h.diagonal().segment(fm.layout.w(), fm.layout.p) += fm.penalty_weights;
  const Eigen::FullPivLU<Eigen::MatrixXd> lu(h);
  if (!lu.isInvertible()) throw NumericalError("penalized Hessian is singular at the ML fit");
  const Eigen::Index k = fm.layout.k;
  EstimateReport rep;
  rep.estimator = Estimator::naive_ml;
  rep.estimate.route = Route::h;
  rep.estimate.theta = fm.theta();
  rep.estimate.sigma = lu.inverse().topLeftCorner(k, k);
  rep.estimate.sigma = 0.5 * (rep.estimate.sigma + rep.estimate.sigma.transpose()).eval();
  rep.estimate.se = rep.estimate.sigma.diagonal().cwiseMax(0.0).cwiseSqrt();
  if (theta_star) rep.estimate.t = t_statistics(rep.estimate.theta, rep.estimate.se, *theta_star);
  return rep;
}

std::vector<EstimateReport> run_estimators(const PanelDataset& ds_in, const std::vector<Estimator>& which,
                                           const EstimatorConfig& cfg,
                                           const std::optional<Eigen::VectorXd>& theta_star) {
  const PanelDataset ds = ds_in.normalization ? ds_in : normalize_covariates(ds_in);
  bool need_h = false, need_g = false, need_folds = false;
  for (Estimator e : which) {
    if (e != Estimator::naive_ml) check_route(cfg.spec, e);
    need_h |= e == Estimator::debias_h || e == Estimator::debias_latent;
    need_g |= e == Estimator::debias_g;
    need_folds |= e != Estimator::naive_ml;
  }
  std::optional<CrossfitData> data;
  std::optional<NuisanceBundle> bundle;
  if (need_folds) {
    data.emplace(ds, cfg.spec);
    bundle = estimate_nuisances(*data, cfg, need_h, need_g);
  }
  std::vector<EstimateReport> out;
  for (Estimator e : which)
    out.push_back(e == Estimator::naive_ml ? naive_ml(ds, cfg, theta_star) : debias(*data, *bundle, e, cfg, theta_star));
  return out;
}

}  // namespace hazardml
