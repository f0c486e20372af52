// hazardml: simulate cohorts, fit kernel hazard models, audit them and run the
// cross-fitted debiased estimators. Exit codes: 0 ok, 1 usage, 2 data, 3 numerical.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "hazardml/error.hpp"
#include "hazardml/experiment.hpp"
#include "hazardml/model_io.hpp"
#include "hazardml/parallel.hpp"

using namespace hazardml;

namespace {

constexpr int kSchemaVersion = 1;

struct ModelArgs {
  std::string data;
  std::vector<std::string> kernels;
  bool latent = false;
  std::vector<std::string> prior_covariates;
  double ichol_tol = kDefaultIcholTol;
  long max_rank = -1;
};

struct GridArgs {
  std::vector<double> lambda_range{0.1, 100.0};
  std::vector<double> sigma_range{0.3, 3.0};
  std::vector<double> linear_lambda_range;
};

struct NuisanceArgs {
  int folds = kDefaultFolds;
  std::optional<double> zeta_h;
  std::vector<double> zeta_g;
  std::vector<std::string> g_kernels;
  bool full_newton = false;
};

struct SimArgs {
  int dgp = 1;
  int n = 2000;
  double p2 = 0.5;
  double kappa = 3.0;
};

PanelDataset load_normalized(const std::string& path) {
  const PanelDataset ds = load_dataset(path);
  return ds.normalization ? ds : normalize_covariates(ds);
}

ModelSpec build_spec(const ModelArgs& a, const PanelDataset& ds) {
  if (a.kernels.empty()) throw UsageError("at least one --kernel is required");
  ModelSpec spec;
  for (const auto& k : a.kernels) spec.kernels.push_back(parse_kernel(k, ds.covariate_names));
  spec.latent = a.latent;
  for (const auto& name : a.prior_covariates) {
    const int c = ds.covariate_index(name);
    if (c < 0) throw UsageError("unknown prior covariate '" + name + "'");
    spec.prior_covariates.push_back(c);
  }
  if (spec.latent && spec.prior_covariates.empty()) throw UsageError("--latent needs --prior-covariates");
  spec.ichol_tol = a.ichol_tol;
  spec.max_rank = a.max_rank;
  spec.validate(ds.d_count + 1);
  return spec;
}

std::vector<double> range_grid(const std::vector<double>& r, const char* flag) {
  if (r.size() != 2 || !(r[0] > 0) || !(r[1] >= r[0]))
    throw UsageError(std::string(flag) + " takes two positive values lo hi");
  return log_grid(r[0], r[1]);
}

HyperGrid build_grid(const GridArgs& g) {
  HyperGrid grid;
  const auto lambdas = range_grid(g.lambda_range, "--lambda-range");
  const auto sigmas = range_grid(g.sigma_range, "--sigma-range");
  for (std::size_t d = 0; d < 3; ++d) {
    grid.gauss_lambda[d] = lambdas;
    grid.gauss_sigma[d] = sigmas;
  }
  if (!g.linear_lambda_range.empty()) grid.linear_lambda = range_grid(g.linear_lambda_range, "--linear-lambda-range");
  return grid;
}

FitOptions fit_options(std::uint64_t seed) {
  FitOptions o;
  o.em.seed = seed;
  return o;
}

EstimatorConfig estimator_config(const ModelSpec& spec, const NuisanceArgs& n, const PanelDataset& ds,
                                 std::uint64_t seed, int threads) {
  EstimatorConfig cfg;
  cfg.spec = spec;
  cfg.fit = fit_options(seed);
  cfg.folds = n.folds;
  cfg.seed = seed;
  cfg.zeta_h = n.zeta_h;
  for (const auto& k : n.g_kernels) cfg.g_kernels.push_back(parse_kernel(k, ds.covariate_names));
  if (n.zeta_g.size() == 1) {
    cfg.zeta_g.assign(static_cast<std::size_t>(ds.k_count), n.zeta_g[0]);
  } else if (!n.zeta_g.empty()) {
    if (static_cast<int>(n.zeta_g.size()) != ds.k_count) throw UsageError("--zeta-g takes one value or one per arm");
    cfg.zeta_g = n.zeta_g;
  }
  cfg.full_newton = n.full_newton;
  cfg.threads = threads;
  return cfg;
}

Estimator route_estimator(const std::string& route) {
  if (route == "h") return Estimator::debias_h;
  if (route == "g") return Estimator::debias_g;
  if (route == "latent") return Estimator::debias_latent;
  return parse_estimator(route);
}

std::optional<Eigen::VectorXd> theta_star(const std::vector<double>& v) {
  if (v.empty()) return std::nullopt;
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

void print_estimate(const EstimateReport& r) {
  std::cout << estimator_name(r.estimator);
  for (Eigen::Index k = 0; k < r.estimate.theta.size(); ++k) {
    std::cout << "  theta" << k + 1 << " = " << r.estimate.theta(k) << " (se " << r.estimate.se(k) << ")";
    if (r.estimate.t) std::cout << " t " << (*r.estimate.t)(k);
  }
  std::cout << '\n';
}

void write_text(const std::string& path, const std::function<void(std::ostream&)>& fn) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out.precision(17);
  fn(out);
  if (!out) throw DataError("failed writing " + path);
}

void add_model_options(CLI::App* cmd, ModelArgs& m) {
  cmd->add_option("--data", m.data, "Panel dataset file")->required();
  cmd->add_option("--kernel", m.kernels, "Kernel kind:covariates[:sigma[:lambda]], e.g. gauss:X1:1:10 (repeatable)");
  cmd->add_flag("--latent", m.latent, "Add the two-class latent risk group");
  cmd->add_option("--prior-covariates", m.prior_covariates, "Baseline covariates of the latent class prior")
      ->delimiter(',');
  cmd->add_option("--ichol-tol", m.ichol_tol, "Incomplete Cholesky trace tolerance")->capture_default_str();
  cmd->add_option("--max-rank", m.max_rank, "Cap on each low-rank basis (-1: none)")->capture_default_str();
}

void add_grid_options(CLI::App* cmd, GridArgs& g) {
  cmd->add_option("--lambda-range", g.lambda_range, "Gaussian ridge weight grid lo hi")->expected(2);
  cmd->add_option("--sigma-range", g.sigma_range, "Gaussian bandwidth grid lo hi")->expected(2);
  cmd->add_option("--linear-lambda-range", g.linear_lambda_range, "Linear ridge weight grid lo hi (default: fixed)")
      ->expected(2);
}

void add_nuisance_options(CLI::App* cmd, NuisanceArgs& n) {
  cmd->add_option("--folds", n.folds, "Cross-fitting folds (>= 3)")->capture_default_str();
  cmd->add_option("--zeta-h", n.zeta_h, "Fixed Hessian ridge (default: tuned by cross-validation)");
  cmd->add_option("--zeta-g", n.zeta_g, "Logistic ridge, one value or one per arm (default: tuned)")->delimiter(',');
  cmd->add_option("--g-kernel", n.g_kernels, "Kernel of the treatment model (repeatable; default: 1D gaussians)");
  cmd->add_flag("--full-newton", n.full_newton, "Iterate the latent-route Newton step to convergence");
}

void add_sim_options(CLI::App* cmd, SimArgs& s) {
  cmd->add_option("--dgp", s.dgp, "1: observed confounders, 2: adds a latent risk group")
      ->check(CLI::IsMember({1, 2}))
      ->capture_default_str();
  cmd->add_option("--n", s.n, "Subjects")->check(CLI::PositiveNumber)->capture_default_str();
  cmd->add_option("--p2", s.p2, "Probability of the condition-2 pathway")->capture_default_str();
  cmd->add_option("--kappa", s.kappa, "Latent group log-hazard shift (dgp 2)")->capture_default_str();
}

SimConfig sim_config(const SimArgs& a, std::uint64_t seed) {
  SimConfig cfg;
  cfg.n_subjects = a.n;
  cfg.p2 = a.p2;
  cfg.seed = seed;
  cfg.latent = a.dgp == 2;
  cfg.kappa_star = a.kappa;
  cfg.validate();
  return cfg;
}

int run(int argc, char** argv) {
  CLI::App app{"Kernel hazard models with cross-fitted debiased treatment effects"};
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML/INI file with option values (schema-version = 1)");
  int schema = kSchemaVersion;
  app.add_option("--schema-version", schema, "Config schema version")->capture_default_str();
  int threads = default_parallelism();
  app.add_option("--threads", threads, "Worker threads (default: HAZARDML_THREADS or all cores)")
      ->check(CLI::PositiveNumber);
  std::uint64_t seed = 0;

  // simulate
  auto* sim_cmd = app.add_subcommand("simulate", "Simulate a cohort and write a panel file");
  SimArgs sim;
  std::string sim_out, w_out;
  add_sim_options(sim_cmd, sim);
  sim_cmd->add_option("--seed", seed, "Random seed")->required();
  sim_cmd->add_option("--out", sim_out, "Output panel file")->required();
  sim_cmd->add_option("--w-out", w_out, "Hidden risk-group sidecar (dgp 2)");

  // fit
  auto* fit_cmd = app.add_subcommand("fit", "Fit the model at fixed hyperparameters");
  ModelArgs fit_m;
  std::string fit_out;
  add_model_options(fit_cmd, fit_m);
  fit_cmd->add_option("--seed", seed, "Seed for latent multi-start")->required();
  fit_cmd->add_option("--out", fit_out, "Model file")->required();

  // evidence
  auto* ev_cmd = app.add_subcommand("evidence", "Grid search by Laplace model evidence");
  ModelArgs ev_m;
  GridArgs ev_g;
  std::string ev_out, ev_model_out;
  add_model_options(ev_cmd, ev_m);
  add_grid_options(ev_cmd, ev_g);
  ev_cmd->add_option("--seed", seed, "Seed for latent multi-start")->required();
  ev_cmd->add_option("--out", ev_out, "Evidence report")->required();
  ev_cmd->add_option("--model-out", ev_model_out, "Model file for the selected point");

  // audit
  auto* au_cmd = app.add_subcommand("audit", "Elapsed-time homogeneity audit by Bayes factor");
  ModelArgs au_m;
  GridArgs au_g;
  std::string au_out;
  add_model_options(au_cmd, au_m);
  add_grid_options(au_cmd, au_g);
  au_cmd->add_option("--seed", seed, "Seed for latent multi-start")->required();
  au_cmd->add_option("--out", au_out, "Audit report")->required();

  // nuisance
  auto* nu_cmd = app.add_subcommand("nuisance", "Cross-fitted nuisance estimation");
  ModelArgs nu_m;
  NuisanceArgs nu_n;
  std::string nu_route = "all", nu_out;
  add_model_options(nu_cmd, nu_m);
  add_nuisance_options(nu_cmd, nu_n);
  nu_cmd->add_option("--route", nu_route, "h, g, latent or all")
      ->check(CLI::IsMember({"h", "g", "latent", "all"}))
      ->capture_default_str();
  nu_cmd->add_option("--seed", seed, "Fold and multi-start seed")->required();
  nu_cmd->add_option("--out", nu_out, "Nuisance bundle")->required();

  // debias
  auto* de_cmd = app.add_subcommand("debias", "Debiased estimate from a nuisance bundle");
  std::string de_data, de_bundle, de_route = "h", de_out;
  std::vector<double> de_star;
  bool de_full_newton = false;
  de_cmd->add_option("--data", de_data, "Panel dataset the bundle was built from")->required();
  de_cmd->add_option("--bundle", de_bundle, "Nuisance bundle")->required();
  de_cmd->add_option("--route", de_route, "h, g or latent")->capture_default_str();
  de_cmd->add_option("--theta-star", de_star, "Reference values for t statistics")->delimiter(',');
  de_cmd->add_flag("--full-newton", de_full_newton, "Iterate the latent-route Newton step to convergence");
  de_cmd->add_option("--out", de_out, "Estimate file")->required();

  // pipeline
  auto* pi_cmd = app.add_subcommand("pipeline", "Model selection, audit, nuisances and debiased estimate");
  ModelArgs pi_m;
  GridArgs pi_g;
  NuisanceArgs pi_n;
  std::string pi_route = "h", pi_dir;
  std::vector<double> pi_star;
  bool pi_skip_audit = false, pi_naive = false;
  add_model_options(pi_cmd, pi_m);
  add_grid_options(pi_cmd, pi_g);
  add_nuisance_options(pi_cmd, pi_n);
  pi_cmd->add_option("--route", pi_route, "h, g or latent")->check(CLI::IsMember({"h", "g", "latent"}))->capture_default_str();
  pi_cmd->add_option("--theta-star", pi_star, "Reference values for t statistics")->delimiter(',');
  pi_cmd->add_flag("--skip-audit", pi_skip_audit, "Skip the elapsed-time audit");
  pi_cmd->add_flag("--naive", pi_naive, "Also report the naive ML estimate");
  pi_cmd->add_option("--seed", seed, "Fold and multi-start seed")->required();
  pi_cmd->add_option("--out-dir", pi_dir, "Directory for evidence, audit, nuisance and estimate files")->required();

  // experiment
  auto* ex_cmd = app.add_subcommand("experiment", "Replicated simulation study of t statistics");
  SimArgs ex_s;
  ExperimentConfig ex;
  std::vector<std::string> ex_estimators{"naive_ml", "debias_H", "debias_g"};
  std::string ex_prefix;
  NuisanceArgs ex_n;
  bool ex_drop_x2 = false, ex_time = false;
  add_sim_options(ex_cmd, ex_s);
  ex_cmd->add_option("--replicates", ex.replicates, "Replicates")->check(CLI::PositiveNumber)->capture_default_str();
  ex_cmd->add_option("--estimators", ex_estimators, "naive_ml, debias_H, debias_g, debias_latent")
      ->delimiter(',')
      ->capture_default_str();
  ex_cmd->add_option("--sigma", ex.model.sigma, "Gaussian bandwidth of the fixed model")->capture_default_str();
  ex_cmd->add_option("--lambda", ex.model.lambda, "Gaussian ridge weight of the fixed model")->capture_default_str();
  ex_cmd->add_flag("--drop-x2", ex_drop_x2, "Fit without the X2 kernel");
  ex_cmd->add_flag("--with-time", ex_time, "Add an elapsed-time kernel");
  add_nuisance_options(ex_cmd, ex_n);
  ex_cmd->add_option("--seed", seed, "Base seed; replicate r uses a derived stream")->required();
  ex_cmd->add_option("--out-prefix", ex_prefix, "Writes <prefix>_replicates.csv, _summary.csv, _histogram.csv")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return static_cast<int>(ErrorKind::usage);
  }
  if (schema != kSchemaVersion)
    throw UsageError("unsupported config schema-version " + std::to_string(schema) + " (expected " +
                     std::to_string(kSchemaVersion) + ")");

  if (sim_cmd->parsed()) {
    const SimConfig cfg = sim_config(sim, seed);
    const SimResult res = simulate(cfg);
    save_dataset(res.data, sim_out, describe_config(cfg));
    if (!w_out.empty()) {
      if (!cfg.latent) throw UsageError("--w-out needs --dgp 2");
      save_latent_sidecar(res, w_out);
    }
    std::cout << "wrote " << res.data.subjects.size() << " subjects to " << sim_out;
    if (res.clipped > 0) std::cout << " (" << res.clipped << " monthly probabilities clipped at 1)";
    std::cout << '\n';
  } else if (fit_cmd->parsed()) {
    const PanelDataset ds = load_normalized(fit_m.data);
    const ModelSpec spec = build_spec(fit_m, ds);
    const SingleEvidence ev = evaluate_evidence(ds, spec, fit_options(seed));
    save_model(model_file(ev.fitted, ds, ev.terms), fit_out);
    std::cout << "log-BME " << ev.terms.log_bme << (ev.fitted.converged ? "" : " (not converged)") << '\n';
  } else if (ev_cmd->parsed()) {
    const PanelDataset ds = load_normalized(ev_m.data);
    const ModelSpec spec = build_spec(ev_m, ds);
    const EvidenceReport rep = grid_search(ds, spec, build_grid(ev_g), fit_options(seed), threads);
    save_evidence_report(rep, ev_out);
    if (!ev_model_out.empty()) save_model(model_file(rep.fitted, ds, rep.terms), ev_model_out);
    std::cout << "best " << rep.hyper.describe() << " log-BME " << rep.terms.log_bme << '\n';
  } else if (au_cmd->parsed()) {
    const PanelDataset ds = load_normalized(au_m.data);
    const ModelSpec spec = build_spec(au_m, ds);
    const AuditResult audit = time_homogeneity_audit(ds, spec, build_grid(au_g), fit_options(seed), threads);
    save_audit_report(audit, au_out);
    std::cout << "log-BF(time) " << audit.log_bayes_factor << (audit.violated ? " violated" : " ok") << '\n';
  } else if (nu_cmd->parsed()) {
    const PanelDataset ds = load_normalized(nu_m.data);
    const ModelSpec spec = build_spec(nu_m, ds);
    const EstimatorConfig cfg = estimator_config(spec, nu_n, ds, seed, threads);
    const CrossfitData data(ds, spec);
    const bool need_h = nu_route != "g", need_g = nu_route == "g" || (nu_route == "all" && !spec.latent);
    const NuisanceBundle b = estimate_nuisances(data, cfg, need_h, need_g);
    save_bundle(b, data, nu_out);
    if (b.zeta_h) std::cout << "zeta_H " << *b.zeta_h << '\n';
    for (std::size_t k = 0; k < b.zeta_g.size(); ++k) std::cout << "zeta_g[" << k + 1 << "] " << b.zeta_g[k] << '\n';
  } else if (de_cmd->parsed()) {
    const PanelDataset ds = load_normalized(de_data);
    const BundleFile file = load_bundle(de_bundle);
    const CrossfitData data(ds, file.spec);
    const NuisanceBundle b = restore_bundle(file, data);
    EstimatorConfig cfg;
    cfg.spec = file.spec;
    cfg.full_newton = de_full_newton;
    const EstimateReport rep = debias(data, b, route_estimator(de_route), cfg, theta_star(de_star));
    save_estimates({rep}, de_out);
    print_estimate(rep);
  } else if (pi_cmd->parsed()) {
    std::filesystem::create_directories(pi_dir);
    const auto path = [&](const char* name) { return (std::filesystem::path(pi_dir) / name).string(); };
    const PanelDataset ds = load_normalized(pi_m.data);
    const ModelSpec spec = build_spec(pi_m, ds);
    const HyperGrid grid = build_grid(pi_g);
    const auto stage = [](const char* name, auto&& fn) {
      try {
        return fn();
      } catch (const DataError& e) {
        throw DataError(std::string("[") + name + "] " + e.what());
      } catch (const NumericalError& e) {
        throw NumericalError(std::string("[") + name + "] " + e.what());
      } catch (const UsageError& e) {
        throw UsageError(std::string("[") + name + "] " + e.what());
      }
    };
    ModelSpec chosen = stage("model selection", [&] {
      const EvidenceReport rep = grid_search(ds, spec, grid, fit_options(seed), threads);
      save_evidence_report(rep, path("evidence.json"));
      save_model(model_file(rep.fitted, ds, rep.terms), path("model.json"));
      std::cout << "model selection: " << rep.hyper.describe() << " log-BME " << rep.terms.log_bme << '\n';
      return rep.fitted.spec;
    });
    if (!pi_skip_audit)
      stage("audit", [&] {
        const AuditResult audit = time_homogeneity_audit(ds, spec, grid, fit_options(seed), threads);
        save_audit_report(audit, path("audit.json"));
        std::cout << "audit: log-BF(time) " << audit.log_bayes_factor << (audit.violated ? " violated" : " ok")
                  << '\n';
        return 0;
      });
    const EstimatorConfig cfg = estimator_config(chosen, pi_n, ds, seed, threads);
    const Estimator which = route_estimator(pi_route);
    const CrossfitData data(ds, chosen);
    const NuisanceBundle b = stage("nuisance", [&] {
      NuisanceBundle out = estimate_nuisances(data, cfg, which != Estimator::debias_g, which == Estimator::debias_g);
      save_bundle(out, data, path("nuisance.json"));
      return out;
    });
    std::vector<EstimateReport> reports;
    stage("debias", [&] {
      if (pi_naive) reports.push_back(naive_ml(ds, cfg, theta_star(pi_star)));
      reports.push_back(debias(data, b, which, cfg, theta_star(pi_star)));
      save_estimates(reports, path("estimate.json"));
      return 0;
    });
    for (const auto& r : reports) print_estimate(r);
  } else if (ex_cmd->parsed()) {
    ex.sim = sim_config(ex_s, seed);
    ex.seed = seed;
    ex.threads = threads;
    ex.model.include_x2 = !ex_drop_x2;
    ex.model.include_time = ex_time;
    ex.model.latent = ex.sim.latent && std::find(ex_estimators.begin(), ex_estimators.end(), "debias_latent") !=
                                           ex_estimators.end();
    ex.estimators.clear();
    for (const auto& e : ex_estimators) ex.estimators.push_back(parse_estimator(e));
    ex.estimator.folds = ex_n.folds;
    ex.estimator.zeta_h = ex_n.zeta_h;
    if (!ex_n.zeta_g.empty()) ex.estimator.zeta_g.assign(2, ex_n.zeta_g[0]);
    if (ex_n.zeta_g.size() == 2) ex.estimator.zeta_g = ex_n.zeta_g;
    ex.estimator.full_newton = ex_n.full_newton;
    const ExperimentResult res = replicate_experiment(ex, [](int r, const std::vector<ReplicateRow>& rows) {
      std::cerr << "replicate " << r;
      for (const auto& row : rows) std::cerr << ' ' << estimator_name(row.estimator) << (row.ok ? " ok" : " failed");
      std::cerr << '\n';
    });
    write_text(ex_prefix + "_replicates.csv", [&](std::ostream& o) { write_replicates_csv(res, o); });
    write_text(ex_prefix + "_summary.csv", [&](std::ostream& o) { write_summary_csv(res, o); });
    write_text(ex_prefix + "_histogram.csv", [&](std::ostream& o) { write_histogram_csv(res, o); });
    write_summary_csv(res, std::cout);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(ErrorKind::data);
  }
}
