#include "hazardml/model_io.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "hazardml/error.hpp"

namespace hazardml {

using nlohmann::json;

namespace {

json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double read_number(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

json vec(const Eigen::VectorXd& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(number(v(i)));
  return out;
}

Eigen::VectorXd read_vec(const json& j) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = read_number(j[i]);
  return v;
}

json mat(const Eigen::MatrixXd& m) {
  json out = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) out.push_back(vec(m.row(r).transpose()));
  return out;
}

Eigen::MatrixXd read_mat(const json& j, Eigen::Index cols = -1) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  if (rows == 0) return Eigen::MatrixXd(0, std::max<Eigen::Index>(cols, 0));
  Eigen::MatrixXd m(rows, static_cast<Eigen::Index>(j[0].size()));
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (static_cast<Eigen::Index>(j[static_cast<std::size_t>(r)].size()) != m.cols())
      throw DataError("ragged matrix in file");
    m.row(r) = read_vec(j[static_cast<std::size_t>(r)]).transpose();
  }
  return m;
}

json kernel_json(const KernelSpec& k) {
  return {{"kind", k.kind == KernelKind::linear ? "linear" : "gaussian"},
          {"inputs", k.inputs},
          {"bandwidth", k.bandwidth},
          {"lambda", k.lambda},
          {"max_rank", k.max_rank}};
}

KernelSpec read_kernel(const json& j) {
  KernelSpec k;
  const std::string kind = j.at("kind");
  if (kind == "linear") {
    k.kind = KernelKind::linear;
  } else if (kind == "gaussian") {
    k.kind = KernelKind::gaussian;
  } else {
    throw DataError("unknown kernel kind '" + kind + "' in file");
  }
  k.inputs = j.at("inputs").get<std::vector<int>>();
  k.bandwidth = j.at("bandwidth");
  k.lambda = j.at("lambda");
  k.max_rank = j.at("max_rank");
  return k;
}

json spec_json(const ModelSpec& s) {
  json kernels = json::array();
  for (const auto& k : s.kernels) kernels.push_back(kernel_json(k));
  return {{"kernels", kernels},
          {"latent", s.latent},
          {"prior_covariates", s.prior_covariates},
          {"ichol_tol", s.ichol_tol},
          {"max_rank", s.max_rank}};
}

ModelSpec read_spec(const json& j) {
  ModelSpec s;
  for (const auto& k : j.at("kernels")) s.kernels.push_back(read_kernel(k));
  s.latent = j.at("latent");
  s.prior_covariates = j.at("prior_covariates").get<std::vector<int>>();
  s.ichol_tol = j.at("ichol_tol");
  s.max_rank = j.at("max_rank");
  return s;
}

json norm_json(const Normalization& n) {
  return {{"mean", n.mean}, {"std", n.std}, {"time_mean", n.time_mean}, {"time_std", n.time_std}};
}

Normalization read_norm(const json& j) {
  Normalization n;
  n.mean = j.at("mean").get<std::vector<double>>();
  n.std = j.at("std").get<std::vector<double>>();
  n.time_mean = j.at("time_mean");
  n.time_std = j.at("time_std");
  return n;
}

json expansion_json(const FunctionExpansion& f) {
  json blocks = json::array();
  for (const auto& b : f.blocks)
    blocks.push_back({{"kernel", kernel_json(b.spec)}, {"anchors", mat(b.anchors)}, {"coef", vec(b.coef)}});
  return {{"bias", f.bias}, {"blocks", blocks}};
}

FunctionExpansion read_expansion(const json& j) {
  FunctionExpansion f;
  f.bias = j.at("bias");
  for (const auto& b : j.at("blocks")) {
    KernelExpansion e;
    e.spec = read_kernel(b.at("kernel"));
    e.anchors = read_mat(b.at("anchors"), e.spec.dimension());
    e.coef = read_vec(b.at("coef"));
    if (e.coef.size() != e.anchors.rows()) throw DataError("expansion coefficients do not match anchors");
    f.blocks.push_back(std::move(e));
  }
  return f;
}

json terms_json(const EvidenceTerms& t) {
  return {{"log_bme", t.log_bme},
          {"nll", t.nll},
          {"penalty", t.penalty},
          {"log_lambda_term", t.log_lambda_term},
          {"half_logdet", t.half_logdet}};
}

EvidenceTerms read_terms(const json& j) {
  EvidenceTerms t;
  t.log_bme = j.at("log_bme");
  t.nll = j.at("nll");
  t.penalty = j.at("penalty");
  t.log_lambda_term = j.at("log_lambda_term");
  t.half_logdet = j.at("half_logdet");
  return t;
}

json curve_json(const ZetaCurve& c) {
  json values = json::array();
  for (double v : c.value) values.push_back(number(v));
  return {{"grid", c.grid}, {"value", values}, {"best", c.best}};
}

ZetaCurve read_curve(const json& j) {
  ZetaCurve c;
  c.grid = j.at("grid").get<std::vector<double>>();
  for (const auto& v : j.at("value")) c.value.push_back(read_number(v));
  c.best = j.at("best");
  return c;
}

json blocks_json(const HessianBlocks& h) { return {{"tt", mat(h.tt)}, {"tf", mat(h.tf)}, {"ff", mat(h.ff)}}; }

HessianBlocks read_blocks(const json& j) {
  HessianBlocks h;
  h.tt = read_mat(j.at("tt"));
  h.tf = read_mat(j.at("tf"));
  h.ff = read_mat(j.at("ff"));
  return h;
}

json header(const std::string& kind) { return {{"format", kind}, {"version", kFileVersion}}; }

void write_json(const json& j, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << j.dump(1) << '\n';
  if (!out) throw DataError("failed writing " + path);
}

json read_json(const std::string& path, const std::string& kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError(path + ": malformed JSON: " + e.what());
  }
  if (j.value("format", std::string()) != kind) throw DataError(path + ": not a " + kind + " file");
  if (j.value("version", 0) != kFileVersion)
    throw DataError(path + ": unsupported " + kind + " version " + std::to_string(j.value("version", 0)));
  return j;
}

template <class Fn>
auto guarded(const std::string& path, Fn&& fn) {
  try {
    return fn();
  } catch (const json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
}

json hyper_json(const HyperPoint& h) {
  json j = json::object();
  if (h.linear_lambda) j["linear_lambda"] = *h.linear_lambda;
  for (int d = 0; d < 3; ++d) {
    const auto dim = std::to_string(d + 1);
    if (h.gauss_lambda[static_cast<std::size_t>(d)]) j["gauss" + dim + "_lambda"] = *h.gauss_lambda[static_cast<std::size_t>(d)];
    if (h.gauss_sigma[static_cast<std::size_t>(d)]) j["gauss" + dim + "_sigma"] = *h.gauss_sigma[static_cast<std::size_t>(d)];
  }
  return j;
}

json evidence_json(const EvidenceReport& r) {
  json entries = json::array();
  for (const auto& e : r.entries) {
    json row = {{"hyper", hyper_json(e.point)}};
    if (e.terms) row["terms"] = terms_json(*e.terms);
    if (!e.error.empty()) row["error"] = e.error;
    entries.push_back(row);
  }
  return {{"hyper", hyper_json(r.hyper)},
          {"terms", terms_json(r.terms)},
          {"spec", spec_json(r.fitted.spec)},
          {"theta", vec(r.fitted.theta())},
          {"converged", r.fitted.converged},
          {"grid", entries}};
}

}  // namespace

ModelFile model_file(const FittedModel& fitted, const PanelDataset& ds, const std::optional<EvidenceTerms>& evidence) {
  if (!ds.normalization) throw UsageError("model files need a normalized dataset");
  ModelFile m;
  m.spec = fitted.spec;
  m.covariate_names = ds.covariate_names;
  m.normalization = *ds.normalization;
  m.theta = fitted.theta();
  m.kappa = fitted.kappa();
  m.beta = fitted.beta();
  m.f = fitted.f();
  m.nll = fitted.nll;
  m.penalty = fitted.penalty;
  m.converged = fitted.converged;
  m.evidence = evidence;
  return m;
}

void save_model(const ModelFile& m, const std::string& path) {
  json j = header("hazardml-model");
  j["spec"] = spec_json(m.spec);
  j["covariates"] = m.covariate_names;
  j["normalization"] = norm_json(m.normalization);
  j["theta"] = vec(m.theta);
  if (m.spec.latent) {
    j["kappa"] = m.kappa;
    j["beta"] = vec(m.beta);
  }
  j["f"] = expansion_json(m.f);
  j["nll"] = m.nll;
  j["penalty"] = m.penalty;
  j["converged"] = m.converged;
  if (m.evidence) j["evidence"] = terms_json(*m.evidence);
  write_json(j, path);
}

ModelFile load_model(const std::string& path) {
  const json j = read_json(path, "hazardml-model");
  return guarded(path, [&] {
    ModelFile m;
    m.spec = read_spec(j.at("spec"));
    m.covariate_names = j.at("covariates").get<std::vector<std::string>>();
    m.normalization = read_norm(j.at("normalization"));
    m.theta = read_vec(j.at("theta"));
    if (m.spec.latent) {
      m.kappa = j.at("kappa");
      m.beta = read_vec(j.at("beta"));
    }
    m.f = read_expansion(j.at("f"));
    m.nll = j.at("nll");
    m.penalty = j.at("penalty");
    m.converged = j.at("converged");
    if (j.contains("evidence")) m.evidence = read_terms(j.at("evidence"));
    return m;
  });
}

void save_evidence_report(const EvidenceReport& report, const std::string& path) {
  json j = header("hazardml-evidence");
  j.update(evidence_json(report));
  write_json(j, path);
}

void save_audit_report(const AuditResult& audit, const std::string& path) {
  json j = header("hazardml-audit");
  j["log_bayes_factor"] = audit.log_bayes_factor;
  j["violated"] = audit.violated;
  j["base"] = evidence_json(audit.base);
  j["augmented"] = evidence_json(audit.augmented);
  write_json(j, path);
}

void save_bundle(const NuisanceBundle& b, const CrossfitData& data, const std::string& path) {
  if (!data.ds->normalization) throw UsageError("nuisance bundles need a normalized dataset");
  json j = header("hazardml-nuisance");
  j["spec"] = spec_json(data.spec);
  j["normalization"] = norm_json(*data.ds->normalization);
  j["subjects"] = data.ds->subjects.size();
  j["folds"] = b.plan.m_count;
  j["assignment"] = b.plan.assignment;
  if (b.zeta_h) j["zeta_h"] = *b.zeta_h;
  if (b.zeta_h_curve) j["zeta_h_curve"] = curve_json(*b.zeta_h_curve);
  j["zeta_g"] = b.zeta_g;
  json tuning = json::array();
  for (const auto& t : b.zeta_g_tuning)
    tuning.push_back({{"cverr", curve_json(t.cverr)},
                      {"log_bme", curve_json(t.log_bme)},
                      {"trivial", t.trivial},
                      {"zeta_cv", t.zeta_cv},
                      {"zeta_bme", t.zeta_bme}});
  j["zeta_g_tuning"] = tuning;
  json folds = json::array();
  for (const auto& f : b.folds) {
    json fj = {{"m", f.m}, {"theta", vec(f.theta)}, {"f", expansion_json(f.f_hat)}};
    if (data.spec.latent) {
      fj["kappa"] = f.kappa;
      fj["beta"] = vec(f.beta);
    }
    if (f.h_train) fj["h_train"] = blocks_json(*f.h_train);
    if (f.h_val) fj["h_val"] = blocks_json(*f.h_val);
    json g = json::array();
    for (const auto& e : f.g_hat) g.push_back(expansion_json(e));
    fj["g"] = g;
    folds.push_back(fj);
  }
  j["fold_nuisances"] = folds;
  write_json(j, path);
}

BundleFile load_bundle(const std::string& path) {
  const json j = read_json(path, "hazardml-nuisance");
  return guarded(path, [&] {
    BundleFile out;
    out.spec = read_spec(j.at("spec"));
    out.normalization = read_norm(j.at("normalization"));
    out.subjects = j.at("subjects");
    NuisanceBundle& b = out.bundle;
    b.plan.m_count = j.at("folds");
    b.plan.assignment = j.at("assignment").get<std::vector<int>>();
    if (b.plan.assignment.size() != out.subjects) throw DataError(path + ": fold assignment has wrong length");
    if (j.contains("zeta_h")) b.zeta_h = j.at("zeta_h").get<double>();
    if (j.contains("zeta_h_curve")) b.zeta_h_curve = read_curve(j.at("zeta_h_curve"));
    b.zeta_g = j.at("zeta_g").get<std::vector<double>>();
    for (const auto& t : j.at("zeta_g_tuning")) {
      ZetaGResult r;
      r.cverr = read_curve(t.at("cverr"));
      r.log_bme = read_curve(t.at("log_bme"));
      r.trivial = t.at("trivial").get<std::vector<bool>>();
      r.zeta_cv = t.at("zeta_cv");
      r.zeta_bme = t.at("zeta_bme");
      b.zeta_g_tuning.push_back(std::move(r));
    }
    for (const auto& fj : j.at("fold_nuisances")) {
      NuisanceFold f;
      f.m = fj.at("m");
      f.train = b.plan.train(f.m);
      f.validation = b.plan.validation(f.m);
      f.holdout = b.plan.holdout(f.m);
      f.theta = read_vec(fj.at("theta"));
      f.f_hat = read_expansion(fj.at("f"));
      if (out.spec.latent) {
        f.kappa = fj.at("kappa");
        f.beta = read_vec(fj.at("beta"));
      }
      if (fj.contains("h_train")) f.h_train = read_blocks(fj.at("h_train"));
      if (fj.contains("h_val")) f.h_val = read_blocks(fj.at("h_val"));
      for (const auto& g : fj.at("g")) f.g_hat.push_back(read_expansion(g));
      b.folds.push_back(std::move(f));
    }
    return out;
  });
}

NuisanceBundle restore_bundle(const BundleFile& file, const CrossfitData& data) {
  if (data.ds->subjects.size() != file.subjects)
    throw DataError("nuisance bundle was built for " + std::to_string(file.subjects) + " subjects, dataset has " +
                    std::to_string(data.ds->subjects.size()));
  const auto& n = data.ds->normalization;
  if (!n || n->mean != file.normalization.mean || n->std != file.normalization.std)
    throw DataError("dataset normalization differs from the nuisance bundle's");
  NuisanceBundle b = file.bundle;
  for (auto& f : b.folds) {
    f.f_rows = f.f_hat.evaluate(data.rows.inputs);
    f.g_rows.clear();
    for (const auto& g : f.g_hat) f.g_rows.push_back(g.evaluate(data.rows.inputs));
  }
  return b;
}

void save_estimates(const std::vector<EstimateReport>& reports, const std::string& path) {
  json j = header("hazardml-estimate");
  json rows = json::array();
  for (const auto& r : reports) {
    json e = {{"estimator", estimator_name(r.estimator)},
              {"theta", vec(r.estimate.theta)},
              {"se", vec(r.estimate.se)},
              {"covariance", mat(r.estimate.sigma)}};
    if (r.estimate.t) e["t"] = vec(*r.estimate.t);
    if (r.zeta_h) e["zeta_h"] = *r.zeta_h;
    if (!r.zeta_g.empty()) e["zeta_g"] = r.zeta_g;
    if (!r.diagnostics.empty()) {
      json d = json::array();
      for (const auto& a : r.diagnostics) d.push_back({{"s1", a.s1}, {"s2", a.s2}, {"s3", a.s3}, {"s4", a.s4}});
      e["arm_sums"] = d;
      e["g_clipped"] = r.g_clipped;
    }
    rows.push_back(e);
  }
  j["estimates"] = rows;
  write_json(j, path);
}

}  // namespace hazardml
