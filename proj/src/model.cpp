#include "hazardml/model.hpp"

#include <cmath>
#include <sstream>

#include "hazardml/em_latent.hpp"
#include "hazardml/error.hpp"
#include "hazardml/rng.hpp"

namespace hazardml {
namespace {

constexpr std::uint32_t kMultiStartProcess = 0x6d737472u;

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  return out;
}

Eigen::VectorXd plain_start(const RowTable& rows, const ParamLayout& layout) {
  Eigen::VectorXd x = Eigen::VectorXd::Zero(layout.size());
  double events = 0.0;
  for (unsigned char e : rows.event) events += e;
  x(layout.w() + layout.p - 1) = std::log(std::max(events, 0.5) / static_cast<double>(std::max<std::size_t>(rows.rows(), 1)));
  return x;
}

OptimizerResult fit_plain(const HazardLikelihood& lik, const Eigen::VectorXd& weights,
                          const Eigen::VectorXd& x0, const OptimizerConfig& cfg) {
  const ParamLayout lay = lik.layout();
  auto objective = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    const double v = lik.nll_gradient(x, g);
    const auto w = x.segment(lay.w(), lay.p);
    g.segment(lay.w(), lay.p).array() += weights.array() * w.array();
    return v + ridge_penalty(weights, w);
  };
  return minimize(objective, x0, cfg);
}

}  // namespace

void ModelSpec::validate(int input_dim) const {
  if (kernels.empty()) throw UsageError("model needs at least one kernel");
  for (const auto& k : kernels) k.validate(input_dim);
  if (latent) {
    for (int c : prior_covariates)
      if (c < 0 || c >= input_dim - 1) throw UsageError("prior covariate index out of range");
  }
  if (!(ichol_tol > 0.0)) throw UsageError("incomplete Cholesky tolerance must be positive");
}

double ridge_penalty(const Eigen::VectorXd& weights, const Eigen::VectorXd& w) {
  return 0.5 * (weights.array() * w.array().square()).sum();
}

FittedModel fit_with_design(const RowTable& rows, Design design, const ModelSpec& spec,
                            const FitOptions& options, const Eigen::MatrixXd* prior_x) {
  if (spec.latent && prior_x == nullptr) throw UsageError("latent model needs the prior design");
  FittedModel fm;
  fm.spec = spec;
  fm.design = std::move(design);
  fm.penalty_weights = fm.design.penalty_weights();
  const Eigen::MatrixXd* px = spec.latent ? prior_x : nullptr;
  HazardLikelihood lik(rows, fm.design.phi, px);
  fm.layout = lik.layout();

  if (!spec.latent) {
    const OptimizerResult res = fit_plain(lik, fm.penalty_weights, plain_start(rows, fm.layout), options.optimizer);
    fm.x = res.x;
    fm.iterations = res.iterations;
    fm.converged = res.converged;
    fm.grad_norm = res.grad_norm;
  } else {
    std::vector<Eigen::VectorXd> starts;
    if (options.start) {
      starts.push_back(*options.start);
    } else {
      HazardLikelihood plain_lik(rows, fm.design.phi);
      FittedModel plain;
      plain.layout = plain_lik.layout();
      plain.x = fit_plain(plain_lik, fm.penalty_weights, plain_start(rows, plain.layout), options.optimizer).x;
      if (options.latent_init) {
        const LatentInit& init = *options.latent_init;
        if (init.theta.size() != fm.layout.k || init.beta.size() != fm.layout.q)
          throw UsageError("latent initial values do not match the model");
        starts.push_back(latent_start(plain, fm.layout, init.theta, init.kappa, init.beta, *prior_x));
      }
      for (int s = 0; !options.latent_init && s < std::max(1, options.em.random_starts); ++s) {
        PhiloxStream rng(options.em.seed, static_cast<std::uint32_t>(s), kMultiStartProcess);
        const double kappa = rng.uniform(0.5, 3.0);
        Eigen::VectorXd beta = Eigen::VectorXd::Zero(fm.layout.q);
        for (Eigen::Index j = 0; j + 1 < fm.layout.q; ++j) beta(j) = 0.5 * rng.normal();
        starts.push_back(latent_start(plain, fm.layout, plain.theta(), kappa, beta, *prior_x));
      }
    }
    EMResult best;
    bool have = false;
    for (const auto& x0 : starts) {
      EMResult em = em_fit(lik, fm.penalty_weights, x0, options.em);
      if (!have || em.trace.back() < best.trace.back()) {
        best = std::move(em);
        have = true;
      }
    }
    fm.x = best.x;
    fm.responsibilities = best.responsibilities;
    fm.em_trace = best.trace;
    fm.iterations = best.iterations;
    fm.converged = best.converged;
    Eigen::VectorXd g;
    lik.nll_gradient(fm.x, g);
    g.segment(fm.layout.w(), fm.layout.p).array() += fm.penalty_weights.array() * fm.w().array();
    fm.grad_norm = g.norm();
    fm.unstable_kappa = std::abs(fm.kappa()) <= 1.0;
  }
  fm.nll = lik.nll(fm.x);
  fm.clipped = lik.last_clip_count();
  fm.penalty = ridge_penalty(fm.penalty_weights, fm.w());
  if (spec.latent) fm.responsibilities = lik.posterior(fm.x);
  return fm;
}

FittedModel fit_model(const RowTable& rows, const ModelSpec& spec, const FitOptions& options,
                      const Eigen::MatrixXd* prior_x) {
  spec.validate(static_cast<int>(rows.inputs.cols()));
  std::size_t events = 0;
  for (unsigned char e : rows.event) events += e;
  if (events == 0) throw DataError("no events in the fitting data");
  return fit_with_design(rows, build_design(spec.kernels, rows.inputs, spec.ichol_tol, spec.max_rank),
                         spec, options, prior_x);
}

KernelSpec parse_kernel(const std::string& text, const std::vector<std::string>& names) {
  const auto parts = split(text, ':');
  if (parts.size() < 2 || parts.size() > 4) throw UsageError("kernel '" + text + "' must look like kind:names[:sigma[:lambda]]");
  KernelSpec spec;
  if (parts[0] == "linear") {
    spec.kind = KernelKind::linear;
    spec.lambda = 0.0;
  } else if (parts[0] == "gauss" || parts[0] == "gaussian") {
    spec.kind = KernelKind::gaussian;
  } else {
    throw UsageError("unknown kernel kind '" + parts[0] + "'");
  }
  for (const auto& name : split(parts[1], ',')) {
    if (name == "t") {
      spec.inputs.push_back(static_cast<int>(names.size()));
      continue;
    }
    int idx = -1;
    for (std::size_t j = 0; j < names.size(); ++j)
      if (names[j] == name) idx = static_cast<int>(j);
    if (idx < 0) throw UsageError("kernel '" + text + "' names unknown covariate '" + name + "'");
    spec.inputs.push_back(idx);
  }
  try {
    if (parts.size() >= 3 && !parts[2].empty()) spec.bandwidth = std::stod(parts[2]);
    if (parts.size() >= 4 && !parts[3].empty()) spec.lambda = std::stod(parts[3]);
  } catch (const std::exception&) {
    throw UsageError("kernel '" + text + "' has a malformed hyperparameter");
  }
  spec.validate(static_cast<int>(names.size()) + 1);
  return spec;
}

std::string describe_kernel(const KernelSpec& spec, const std::vector<std::string>& names) {
  std::string out = spec.kind == KernelKind::linear ? "linear:" : "gauss:";
  for (std::size_t l = 0; l < spec.inputs.size(); ++l) {
    if (l) out += ',';
    const auto c = static_cast<std::size_t>(spec.inputs[l]);
    out += c < names.size() ? names[c] : (c == names.size() ? "t" : "#" + std::to_string(c));
  }
  return out;
}

}  // namespace hazardml
