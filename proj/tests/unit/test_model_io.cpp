#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "hazardml/error.hpp"
#include "hazardml/experiment.hpp"
#include "hazardml/model_io.hpp"
#include "support/fixtures.hpp"

using namespace hazardml;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("hazardml_io_" + name)).string();
}

}  // namespace

TEST_CASE("model file round trip reproduces f exactly") {
  const PanelDataset ds = testing::random_panel(40, 2, 2, 17, 0.15);
  const RowTable rows = build_rows(ds);
  ModelSpec spec;
  spec.kernels = {parse_kernel("gauss:x0,x1:0.8:3", ds.covariate_names), parse_kernel("linear:x1", ds.covariate_names)};
  const FittedModel fitted = fit_model(rows, spec);
  const auto path = temp_path("model.json");
  save_model(model_file(fitted, ds), path);
  const ModelFile back = load_model(path);
  CHECK(back.theta == fitted.theta());
  CHECK(back.spec.kernels.size() == 2);
  CHECK(back.spec.kernels[0].bandwidth == 0.8);
  CHECK(back.covariate_names == ds.covariate_names);
  CHECK(back.normalization.mean == ds.normalization->mean);
  CHECK(back.f.evaluate(rows.inputs) == fitted.f().evaluate(rows.inputs));
  std::filesystem::remove(path);
}

TEST_CASE("nuisance bundle round trip gives identical debiased estimates") {
  SimConfig sim;
  sim.n_subjects = 150;
  sim.seed = 4;
  const PanelDataset ds = normalize_covariates(simulate(sim).data);
  EstimatorConfig cfg;
  SimModelOptions mo;
  mo.lambda = 10.0;
  cfg.spec = sim_model_spec(ds, mo);
  cfg.folds = 3;
  cfg.zeta_h = 1e-3;
  cfg.zeta_g = {0.01, 0.01};
  const CrossfitData data(ds, cfg.spec);
  const NuisanceBundle b = estimate_nuisances(data, cfg, true, true);
  const auto path = temp_path("bundle.json");
  save_bundle(b, data, path);
  const BundleFile file = load_bundle(path);
  const NuisanceBundle back = restore_bundle(file, data);
  REQUIRE(back.folds.size() == b.folds.size());
  for (std::size_t m = 0; m < b.folds.size(); ++m) {
    CHECK(back.folds[m].f_rows == b.folds[m].f_rows);
    CHECK(back.folds[m].h_train->ff == b.folds[m].h_train->ff);
    CHECK(back.folds[m].holdout == b.folds[m].holdout);
  }
  for (Estimator e : {Estimator::debias_h, Estimator::debias_g})
    CHECK(debias(data, back, e, cfg).estimate.theta == debias(data, b, e, cfg).estimate.theta);

  const PanelDataset other = normalize_covariates(simulate(SimConfig{.n_subjects = 120, .seed = 4}).data);
  const CrossfitData other_data(other, cfg.spec);
  CHECK_THROWS_AS(restore_bundle(file, other_data), DataError);
  std::filesystem::remove(path);
}

TEST_CASE("wrong kind or version is a data error") {
  const auto path = temp_path("bad.json");
  {
    std::ofstream out(path);
    out << R"({"format": "hazardml-estimate", "version": 1})";
  }
  CHECK_THROWS_AS(load_model(path), DataError);
  {
    std::ofstream out(path);
    out << R"({"format": "hazardml-model", "version": 99})";
  }
  CHECK_THROWS_AS(load_model(path), DataError);
  {
    std::ofstream out(path);
    out << "{not json";
  }
  CHECK_THROWS_AS(load_model(path), DataError);
  CHECK_THROWS_AS(load_model(temp_path("missing.json")), DataError);
  std::filesystem::remove(path);
}
