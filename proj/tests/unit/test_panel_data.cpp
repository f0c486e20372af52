#include <sstream>

#include "doctest.h"
#include "hazardml/error.hpp"
#include "hazardml/panel_data.hpp"
#include "support/fixtures.hpp"

using namespace hazardml;

namespace {

const char* kMinimal =
    "# hazardml panel v1\n"
    "# dt 0.083333333333333329\n"
    "# K 2\n"
    "# d 1\n"
    "# names age\n"
    "S 1 0.2 NA\n"
    "R 1 0 0 0 60\n"
    "R 1 0.083333333333333329 1 0 60.1\n"
    "R 1 0.16666666666666666 0 1 .\n";

PanelDataset parse(const std::string& text) {
  std::istringstream in(text);
  return read_dataset(in);
}

}  // namespace

TEST_CASE("minimal file loads with monthly steps and no event") {
  const PanelDataset ds = parse(kMinimal);
  REQUIRE(ds.subjects.size() == 1);
  CHECK(ds.dt == doctest::Approx(1.0 / 12.0).epsilon(1e-15));
  CHECK(ds.k_count == 2);
  const auto& s = ds.subjects[0];
  CHECK(s.steps() == 3);
  CHECK_FALSE(s.event_time.has_value());
  CHECK(s.arms == std::vector<int>{-1, 0, 1});
  CHECK(s.x(2, 0, 1) == 60.1);  // carried forward
  CHECK(ds.event_step(s) == -1);
}

TEST_CASE("simultaneous treatments are rejected") {
  std::string text = kMinimal;
  text.replace(text.find("R 1 0 0 0 60"), 12, "R 1 0 1 1 60");
  CHECK_THROWS_WITH_AS(parse(text), doctest::Contains("simultaneous treatments"), DataError);
}

TEST_CASE("non-uniform spacing and missing steps are rejected") {
  std::string text = kMinimal;
  text.replace(text.find("R 1 0.16666666666666666"), 23, "R 1 0.2");
  CHECK_THROWS_WITH_AS(parse(text), doctest::Contains("non-uniform dt"), DataError);

  const std::string truncated =
      "# hazardml panel v1\n# K 1\n# d 1\nS 4 0.5 NA\nR 4 0 0 1\n";
  CHECK_THROWS_WITH_AS(parse(truncated), doctest::Contains("subject 4"), DataError);
}

TEST_CASE("event subjects end at the event step") {
  const std::string text =
      "# hazardml panel v1\n# K 1\n# d 1\n"
      "S 9 1 0.083333333333333329\nR 9 0 0 1\nR 9 0.083333333333333329 1 2\n";
  const PanelDataset ds = parse(text);
  CHECK(ds.event_step(ds.subjects[0]) == 1);
  const std::string past =
      "# hazardml panel v1\n# K 1\n# d 1\nS 9 0.05 0.1\nR 9 0 0 1\n";
  CHECK_THROWS_AS(parse(past), DataError);
}

TEST_CASE("save then load is bit-exact") {
  const PanelDataset ds = testing::random_panel(25, 2, 3, 5);
  std::ostringstream out;
  write_dataset(ds, out);
  std::istringstream in(out.str());
  const PanelDataset back = read_dataset(in);
  REQUIRE(back.subjects.size() == ds.subjects.size());
  CHECK(back.covariate_names == ds.covariate_names);
  for (std::size_t i = 0; i < ds.subjects.size(); ++i) {
    const auto& a = ds.subjects[i];
    const auto& b = back.subjects[i];
    CHECK(a.id == b.id);
    CHECK(a.censor_time == b.censor_time);
    CHECK(a.event_time == b.event_time);
    CHECK(a.arms == b.arms);
    CHECK(a.covariates == b.covariates);
  }
  std::ostringstream again;
  write_dataset(back, again);
  CHECK(again.str() == out.str());
}

TEST_CASE("step counts follow floor(min(T, C)/dt) + 1") {
  const PanelDataset ds = testing::random_panel(40, 1, 2, 8);
  std::size_t expected = 0;
  for (const auto& s : ds.subjects) {
    const double end = s.event_time ? std::min(*s.event_time, s.censor_time) : s.censor_time;
    expected += static_cast<std::size_t>(std::floor(end / ds.dt + 1e-9)) + 1;
  }
  CHECK(ds.total_steps() == expected);
}

TEST_CASE("normalization") {
  PanelDataset ds;
  ds.k_count = 1;
  ds.d_count = 2;
  SubjectPanel s;
  s.id = 0;
  s.censor_time = 0.1;
  s.arms = {-1, -1};
  s.covariates = {0.0, 5.0, 2.0, 5.0};
  ds.subjects.push_back(s);
  ds.validate();

  SUBCASE("constant column fails") { CHECK_THROWS_WITH_AS(compute_normalization(ds), doctest::Contains("zero variance"), DataError); }

  SUBCASE("two-point column maps to -1, 1") {
    ds.subjects[0].covariates = {0.0, 5.0, 2.0, 7.0};
    const PanelDataset nd = normalize_covariates(ds);
    const RowTable rt = build_rows(nd);
    CHECK(rt.inputs(0, 0) == doctest::Approx(-1.0));
    CHECK(rt.inputs(1, 0) == doctest::Approx(1.0));
  }

  SUBCASE("normalized columns have mean 0 and variance 1") {
    const PanelDataset nd = testing::random_panel(30, 1, 3, 2);
    const RowTable rt = build_rows(nd);
    for (int j = 0; j < 3; ++j) {
      const auto col = rt.inputs.col(j);
      CHECK(std::abs(col.mean()) < 1e-10);
      CHECK(std::abs((col.array() - col.mean()).square().mean() - 1.0) < 1e-10);
    }
  }

  SUBCASE("held-out data reuse the training statistics") {
    const PanelDataset train = testing::random_panel(30, 1, 2, 3);
    const PanelDataset test = testing::random_panel(10, 1, 2, 4);
    const Normalization stored = *train.normalization;
    const PanelDataset applied = apply_normalization(test, stored);
    CHECK(applied.normalization->mean == stored.mean);
    CHECK(applied.normalization->std == stored.std);
    const PanelDataset twice = apply_normalization(applied, *applied.normalization);
    CHECK(twice.normalization->mean == stored.mean);
    CHECK(compute_normalization(test).mean != stored.mean);
  }
}

TEST_CASE("row table layout") {
  const PanelDataset ds = testing::random_panel(12, 2, 2, 9);
  const RowTable rt = build_rows(ds);
  CHECK(rt.rows() == ds.total_steps());
  CHECK(rt.subjects() == 12);
  CHECK(rt.inputs.cols() == 3);
  std::size_t events = 0;
  for (auto e : rt.event) events += e;
  std::size_t expected = 0;
  for (const auto& s : ds.subjects) expected += s.event_time ? 1 : 0;
  CHECK(events == expected);

  const std::vector<std::size_t> pick{3, 1};
  const RowTable sub = build_rows(ds, pick);
  CHECK(sub.subjects() == 2);
  CHECK(sub.rows() == ds.subjects[3].steps() + ds.subjects[1].steps());
}
