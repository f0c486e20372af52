#pragma once

#include <string>
#include <vector>

#include "hazardml/estimators.hpp"
#include "hazardml/model_evidence.hpp"

// JSON artifacts written by the command-line tool. Every file carries
// {"format": <kind>, "version": 1}; readers reject other kinds or versions.

namespace hazardml {

inline constexpr int kFileVersion = 1;

// A fitted model: spec, parameters and the fitted function f as anchor expansions,
// plus the normalization of the dataset it was fitted on.
struct ModelFile {
  ModelSpec spec;
  std::vector<std::string> covariate_names;
  Normalization normalization;
  Eigen::VectorXd theta;
  double kappa = 0.0;
  Eigen::VectorXd beta;
  FunctionExpansion f;
  double nll = 0.0;
  double penalty = 0.0;
  bool converged = false;
  std::optional<EvidenceTerms> evidence;
};

ModelFile model_file(const FittedModel& fitted, const PanelDataset& ds,
                     const std::optional<EvidenceTerms>& evidence = std::nullopt);
void save_model(const ModelFile& model, const std::string& path);
ModelFile load_model(const std::string& path);

// Grid search result: chosen point, its terms and every evaluated point.
void save_evidence_report(const EvidenceReport& report, const std::string& path);
void save_audit_report(const AuditResult& audit, const std::string& path);

// Nuisance bundle: model spec, normalization, fold plan and per-fold nuisances
// (theta-hat, kappa, beta, f-hat, Hessian blocks, g-hat) with the chosen zetas.
struct BundleFile {
  ModelSpec spec;
  Normalization normalization;
  std::size_t subjects = 0;
  NuisanceBundle bundle;
};
void save_bundle(const NuisanceBundle& bundle, const CrossfitData& data, const std::string& path);
// Re-evaluates f-hat and g-hat on every row of `data`, which must be the dataset
// the bundle was built from (same subject count and normalization).
BundleFile load_bundle(const std::string& path);
NuisanceBundle restore_bundle(const BundleFile& file, const CrossfitData& data);

void save_estimates(const std::vector<EstimateReport>& reports, const std::string& path);

}  // namespace hazardml
