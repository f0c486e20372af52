#include "hazardml/experiment.hpp"

#include <cmath>
#include <ostream>

#include "hazardml/em_latent.hpp"
#include "hazardml/error.hpp"
#include "hazardml/parallel.hpp"
#include "hazardml/rng.hpp"

namespace hazardml {
namespace {

int column(const PanelDataset& ds, const std::string& name) {
  const int c = ds.covariate_index(name);
  if (c < 0) throw UsageError("dataset has no covariate '" + name + "'");
  return c;
}

KernelSpec gauss(int col, const SimModelOptions& opt) {
  KernelSpec k;
  k.kind = KernelKind::gaussian;
  k.inputs = {col};
  k.bandwidth = opt.sigma;
  k.lambda = opt.lambda;
  return k;
}

}  // namespace

ModelSpec sim_model_spec(const PanelDataset& ds, const SimModelOptions& opt) {
  ModelSpec spec;
  KernelSpec age;
  age.kind = KernelKind::linear;
  age.inputs = {column(ds, "age")};
  age.lambda = 0.0;
  spec.kernels.push_back(age);
  spec.kernels.push_back(gauss(column(ds, "date"), opt));
  spec.kernels.push_back(gauss(column(ds, "X1"), opt));
  if (opt.include_x2) spec.kernels.push_back(gauss(column(ds, "X2"), opt));
  if (opt.include_time) spec.kernels.push_back(gauss(ds.d_count, opt));
  if (opt.latent) {
    spec.latent = true;
    spec.prior_covariates = {column(ds, "test1"), column(ds, "test2"), column(ds, "test3")};
  }
  return spec;
}

LatentInit sim_latent_init(const SimConfig& cfg, const PanelDataset& ds, const ModelSpec& spec) {
  if (!ds.normalization) throw UsageError("latent initial values need a normalized dataset");
  if (spec.prior_covariates.size() != 3) throw UsageError("expected the three blood tests as prior covariates");
  LatentInit init;
  init.theta = Eigen::Map<const Eigen::Vector2d>(cfg.theta_star.data());
  init.kappa = cfg.kappa_star;
  Eigen::VectorXd raw(4);
  raw << cfg.beta_star[1], cfg.beta_star[2], cfg.beta_star[3], cfg.beta_star[0];
  init.beta = normalize_prior_coefficients(raw, spec.prior_covariates, *ds.normalization);
  return init;
}

std::vector<ExperimentSummary> summarize(const std::vector<ReplicateRow>& rows, const std::vector<Estimator>& which,
                                         int arms) {
  std::vector<ExperimentSummary> out;
  for (Estimator e : which)
    for (int a = 0; a < arms; ++a) {
      ExperimentSummary s;
      s.estimator = e;
      s.arm = a;
      double sum_t = 0.0, sum_t2 = 0.0, sum_theta = 0.0;
      for (const auto& r : rows) {
        if (r.estimator != e) continue;
        if (!r.ok || !std::isfinite(r.t(a))) {
          ++s.failed;
          continue;
        }
        ++s.succeeded;
        sum_t += r.t(a);
        sum_t2 += r.t(a) * r.t(a);
        sum_theta += r.theta(a);
      }
      if (s.succeeded > 0) {
        const double n = s.succeeded;
        s.mean_t = sum_t / n;
        s.mean_theta = sum_theta / n;
        s.std_t = s.succeeded > 1 ? std::sqrt(std::max(0.0, (sum_t2 - n * s.mean_t * s.mean_t) / (n - 1.0))) : 0.0;
      } else {
        s.mean_t = s.std_t = s.mean_theta = std::nan("");
      }
      out.push_back(s);
    }
  return out;
}

ExperimentResult replicate_experiment(const ExperimentConfig& cfg, const ProgressFn& progress) {
  if (cfg.replicates < 1) throw UsageError("need at least one replicate");
  if (cfg.estimators.empty()) throw UsageError("no estimators requested");
  const auto n_est = cfg.estimators.size();
  ExperimentResult res;
  res.replicates = cfg.replicates;
  res.rows.resize(static_cast<std::size_t>(cfg.replicates) * n_est);
  const Eigen::VectorXd theta_star = Eigen::Map<const Eigen::Vector2d>(cfg.sim.theta_star.data());

  parallel_for(static_cast<std::size_t>(cfg.replicates), cfg.threads, [&](std::size_t r) {
    SimConfig sim = cfg.sim;
    sim.seed = derive_seed(cfg.seed, r);
    std::vector<ReplicateRow> rows(n_est);
    for (std::size_t e = 0; e < n_est; ++e) {
      rows[e].replicate = static_cast<int>(r);
      rows[e].seed = sim.seed;
      rows[e].estimator = cfg.estimators[e];
    }
    try {
      const PanelDataset ds = normalize_covariates(simulate(sim).data);
      EstimatorConfig ec = cfg.estimator;
      ec.spec = sim_model_spec(ds, cfg.model);
      if (ec.spec.latent) ec.fit.latent_init = sim_latent_init(sim, ds, ec.spec);
      ec.seed = sim.seed;
      ec.threads = 1;
      // Each estimator runs separately so one failing route does not hide the others.
      std::optional<CrossfitData> data;
      std::optional<NuisanceBundle> bundle;
      bool need_h = false, need_g = false;
      for (Estimator e : cfg.estimators) {
        need_h |= e == Estimator::debias_h || e == Estimator::debias_latent;
        need_g |= e == Estimator::debias_g;
      }
      for (std::size_t e = 0; e < n_est; ++e) {
        try {
          EstimateReport rep;
          if (cfg.estimators[e] == Estimator::naive_ml) {
            rep = naive_ml(ds, ec, theta_star);
          } else {
            if (!bundle) {
              data.emplace(ds, ec.spec);
              bundle = estimate_nuisances(*data, ec, need_h, need_g);
            }
            rep = debias(*data, *bundle, cfg.estimators[e], ec, theta_star);
          }
          rows[e].theta = rep.estimate.theta;
          rows[e].se = rep.estimate.se;
          rows[e].t = *rep.estimate.t;
          rows[e].ok = true;
        } catch (const Error& err) {
          rows[e].error = err.what();
        }
      }
    } catch (const Error& err) {
      for (auto& row : rows) row.error = err.what();
    }
    for (std::size_t e = 0; e < n_est; ++e) res.rows[r * n_est + e] = rows[e];
    if (progress) progress(static_cast<int>(r), rows);
  });
  res.summaries = summarize(res.rows, cfg.estimators, static_cast<int>(theta_star.size()));
  return res;
}

void write_replicates_csv(const ExperimentResult& res, std::ostream& out) {
  out << "# replicates " << res.replicates << '\n';
  out << "replicate,seed,estimator,arm,ok,theta,se,t,error\n";
  for (const auto& r : res.rows) {
    const int arms = r.ok ? static_cast<int>(r.theta.size()) : 1;
    for (int a = 0; a < arms; ++a) {
      out << r.replicate << ',' << r.seed << ',' << estimator_name(r.estimator) << ',' << a + 1 << ','
          << (r.ok ? 1 : 0) << ',';
      if (r.ok)
        out << r.theta(a) << ',' << r.se(a) << ',' << r.t(a) << ",\n";
      else
        out << ",,,\"" << r.error << "\"\n";
    }
  }
}

void write_summary_csv(const ExperimentResult& res, std::ostream& out) {
  out << "# replicates " << res.replicates << '\n';
  out << "estimator,arm,succeeded,failed,mean_theta,mean_t,std_t\n";
  for (const auto& s : res.summaries)
    out << estimator_name(s.estimator) << ',' << s.arm + 1 << ',' << s.succeeded << ',' << s.failed << ','
        << s.mean_theta << ',' << s.mean_t << ',' << s.std_t << '\n';
}

void write_histogram_csv(const ExperimentResult& res, std::ostream& out, double lo, double hi, double width) {
  if (!(width > 0.0) || !(hi > lo)) throw UsageError("histogram needs lo < hi and a positive width");
  const int bins = static_cast<int>(std::ceil((hi - lo) / width - 1e-9));
  out << "# replicates " << res.replicates << '\n';
  out << "estimator,arm,bin_lo,bin_hi,count\n";
  for (const auto& s : res.summaries) {
    std::vector<int> counts(static_cast<std::size_t>(bins + 2), 0);
    for (const auto& r : res.rows) {
      if (r.estimator != s.estimator || !r.ok || !std::isfinite(r.t(s.arm))) continue;
      const double t = r.t(s.arm);
      const int b = t < lo ? 0 : (t >= hi ? bins + 1 : 1 + std::min(bins - 1, static_cast<int>((t - lo) / width)));
      ++counts[static_cast<std::size_t>(b)];
    }
    for (int b = 0; b < bins + 2; ++b) {
      out << estimator_name(s.estimator) << ',' << s.arm + 1 << ',';
      if (b == 0)
        out << "-inf," << lo;
      else if (b == bins + 1)
        out << hi << ",inf";
      else
        out << lo + (b - 1) * width << ',' << std::min(hi, lo + b * width);
      out << ',' << counts[static_cast<std::size_t>(b)] << '\n';
    }
  }
}

}  // namespace hazardml
