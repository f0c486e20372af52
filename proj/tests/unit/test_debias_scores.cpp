#include <cmath>

#include "doctest.h"
#include "hazardml/debias_scores.hpp"
#include "hazardml/error.hpp"
#include "hazardml/hazard_likelihood.hpp"
#include "support/fixtures.hpp"
#include "support/orthogonality_oracle.hpp"

using namespace hazardml;

namespace {

// One subject, one arm; rows given as (arm, event) pairs with f = 0 unless set.
RowTable single_subject(const std::vector<int>& arms, int event_step) {
  PanelDataset ds;
  ds.k_count = 1;
  ds.d_count = 1;
  ds.covariate_names = {"x"};
  SubjectPanel s;
  s.id = 0;
  s.censor_time = (static_cast<double>(arms.size()) - 0.5) * ds.dt;
  s.arms = arms;
  for (std::size_t t = 0; t < arms.size(); ++t) s.covariates.push_back(static_cast<double>(t));
  if (event_step >= 0) s.event_time = event_step * ds.dt;
  ds.subjects.push_back(s);
  return build_rows(normalize_covariates(ds));
}

ScoreTerms toy_terms(double a, double b) {
  ScoreTerms t(1);
  t.q(0) = a;
  t.c(0) = -b;
  return t;
}

double bisect(const std::function<double(double)>& fn, double lo, double hi) {
  double flo = fn(lo);
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double fm = fn(mid);
    if ((fm < 0) == (flo < 0)) {
      lo = mid;
      flo = fm;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

}  // namespace

TEST_CASE("logistic-route terms by hand") {
  SUBCASE("untreated subject without an event: only the untreated integral") {
    const RowTable rows = single_subject({-1, -1, -1}, -1);
    const Eigen::VectorXd f = Eigen::VectorXd::Constant(3, -1.0);
    const std::vector<Eigen::VectorXd> g{Eigen::VectorXd::Constant(3, 0.3)};
    const GTerms t = g_score_terms(rows, 0, f, g);
    CHECK(t.q(0) == 0.0);
    CHECK(t.s2(0) == 0.0);
    CHECK(t.s4(0) == 0.0);
    CHECK(t.s3(0) == doctest::Approx(3 * std::exp(-1.0) * (1 + std::exp(0.3))).epsilon(1e-14));
    CHECK(t.terms().value(Eigen::VectorXd::Zero(1))(0) > 0.0);
  }
  SUBCASE("treated subject with an event and g = 0") {
    const RowTable rows = single_subject({0, 0}, 1);
    Eigen::VectorXd f(2);
    f << -0.4, 0.2;
    const std::vector<Eigen::VectorXd> g{Eigen::VectorXd::Zero(2)};
    const double theta = 0.7;
    const double phi = g_score_terms(rows, 0, f, g).terms().value(Eigen::VectorXd::Constant(1, theta))(0);
    CHECK(phi == doctest::Approx(2 * std::exp(-theta) - 2 * (std::exp(-0.4) + std::exp(0.2))).epsilon(1e-14));
  }
  SUBCASE("large g is clipped and counted") {
    const RowTable rows = single_subject({-1, 0}, -1);
    const std::vector<Eigen::VectorXd> g{Eigen::VectorXd::Constant(2, 40.0)};
    const GTerms t = g_score_terms(rows, 0, Eigen::VectorXd::Zero(2), g);
    CHECK(t.clipped == 2);
    CHECK(t.s3(0) == doctest::Approx(1 + std::exp(kGClip)));
  }
}

TEST_CASE("H-route terms reduce to the plain theta gradient without correction") {
  const PanelDataset ds = testing::random_panel(10, 2, 1, 5, 0.2);
  const RowTable rows = build_rows(ds);
  const Eigen::MatrixXd phi = Eigen::MatrixXd::Ones(static_cast<Eigen::Index>(rows.rows()), 1);
  PhiloxStream rng(1, 0, 0);
  Eigen::VectorXd f(phi.rows());
  for (Eigen::Index r = 0; r < f.size(); ++r) f(r) = -2.0 + 0.3 * rng.normal();
  Eigen::VectorXd theta(2);
  theta << 0.3, -0.2;
  const HazardLikelihood lik(rows, phi, nullptr, &f);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(3);
  x.head(2) = theta;
  const Eigen::MatrixXd grads = lik.subject_gradients(x);
  const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(2, 1);
  for (std::size_t i = 0; i < rows.subjects(); ++i) {
    const Eigen::VectorXd phi_i = h_score_terms(rows, i, f, phi, zero).value(theta);
    CHECK((phi_i - grads.row(static_cast<Eigen::Index>(i)).head(2).transpose()).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("H-route terms match the dense formula as a function of theta") {
  const PanelDataset ds = testing::random_panel(10, 2, 2, 8, 0.2);
  const RowTable rows = build_rows(ds);
  KernelSpec k;
  k.inputs = {0, 1};
  const Design d = build_design({k}, rows.inputs);
  PhiloxStream rng(2, 0, 0);
  Eigen::VectorXd f(d.phi.rows());
  for (Eigen::Index r = 0; r < f.size(); ++r) f(r) = -2.0 + 0.3 * rng.normal();
  Eigen::MatrixXd c(2, d.width());
  for (Eigen::Index i = 0; i < c.size(); ++i) c.data()[i] = 0.2 * rng.normal();
  const HazardLikelihood lik(rows, d.phi, nullptr, &f);
  for (int trial = 0; trial < 3; ++trial) {
    Eigen::VectorXd theta(2);
    theta << rng.normal(), rng.normal();
    Eigen::VectorXd x = Eigen::VectorXd::Zero(lik.layout().size());
    x.head(2) = theta;
    const Eigen::MatrixXd g = lik.subject_gradients(x);
    for (std::size_t i = 0; i < rows.subjects(); ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      const Eigen::VectorXd dense = g.row(ii).head(2).transpose() - c * g.row(ii).tail(d.width()).transpose();
      const Eigen::VectorXd mine = h_score_terms(rows, i, f, d.phi, c).value(theta);
      CHECK((mine - dense).cwiseAbs().maxCoeff() <= 1e-11 * std::max(1.0, dense.cwiseAbs().maxCoeff()));
    }
  }
}

TEST_CASE("closed-form solves") {
  SUBCASE("logistic route with S1 = S2 = 1 and S3 = S4 = 0") {
    ScoreTerms t(1);
    t.q(0) = 1.0;
    t.c(0) = -1.0;
    const LinearScoreSystem sys(Route::g, {t});
    CHECK(sys.solve()(0) == 0.0);
  }
  SUBCASE("nonpositive bracket names the arm") {
    ScoreTerms t(2);
    t.q << 1.0, 0.0;
    t.c << -1.0, -1.0;
    const LinearScoreSystem sys(Route::g, {t});
    CHECK_THROWS_WITH_AS(sys.solve(), doctest::Contains("arm 2"), NumericalError);
  }
  SUBCASE("singular H-route system") {
    ScoreTerms t(2);
    t.p << 1.0, 1.0, 1.0, 1.0;
    t.c << -1.0, -1.0;
    const LinearScoreSystem sys(Route::h, {t});
    CHECK_THROWS_AS(sys.solve(), NumericalError);
  }
}

TEST_CASE("closed forms agree with bisection on the assembled score") {
  PhiloxStream rng(3, 0, 0);
  // H route, one arm: phi(theta) = P e^theta + c, increasing in theta.
  std::vector<ScoreTerms> h_terms;
  for (int i = 0; i < 30; ++i) {
    ScoreTerms t(1);
    t.p(0, 0) = 0.5 + rng.uniform();
    t.c(0) = -rng.uniform() * 2.0;
    h_terms.push_back(t);
  }
  const LinearScoreSystem h(Route::h, h_terms);
  const double root_h = bisect([&](double th) { return h.scores(Eigen::VectorXd::Constant(1, th)).sum(); }, -10, 10);
  CHECK(std::abs(h.solve()(0) - root_h) <= 1e-10);

  // Logistic route, two arms: separable, decreasing in each theta_k.
  std::vector<ScoreTerms> g_terms;
  for (int i = 0; i < 30; ++i) {
    ScoreTerms t(2);
    t.q << rng.uniform(), rng.uniform();
    t.c << -rng.uniform(), 0.5 - rng.uniform();
    g_terms.push_back(t);
  }
  const LinearScoreSystem g(Route::g, g_terms);
  const Eigen::VectorXd sol = g.solve();
  for (int a = 0; a < 2; ++a) {
    auto arm_score = [&](double th) {
      Eigen::VectorXd theta = sol;
      theta(a) = th;
      return g.scores(theta).col(a).sum();
    };
    CHECK(std::abs(sol(a) - bisect(arm_score, -20, 20)) <= 1e-10);
  }
  CHECK(g.scores(sol).colwise().mean().norm() <= 1e-8);
  CHECK(h.scores(h.solve()).colwise().mean().norm() <= 1e-8);
}

TEST_CASE("mixed terms fall back to Newton") {
  ScoreTerms t(1);
  t.p(0, 0) = 1.0;
  t.q(0) = -2.0;
  t.c(0) = -0.5;
  const LinearScoreSystem sys(Route::h, {t});
  CHECK(std::abs(sys.scores(sys.solve()).sum()) <= 1e-12);
}

TEST_CASE("sandwich variance equals the delta method for phi = e^-theta a - b") {
  const double a[] = {1.2, 0.7, 2.1, 0.4, 1.6};
  const double b[] = {0.9, 1.1, 1.3, 0.2, 0.8};
  std::vector<ScoreTerms> terms;
  double sa = 0.0, sb = 0.0;
  for (int i = 0; i < 5; ++i) {
    terms.push_back(toy_terms(a[i], b[i]));
    sa += a[i];
    sb += b[i];
  }
  const LinearScoreSystem sys(Route::g, terms);
  const Eigen::VectorXd theta = sys.solve();
  CHECK(theta(0) == doctest::Approx(std::log(sa / sb)).epsilon(1e-14));
  // theta = ln(mean a) - ln(mean b): gradient (1/abar, -1/bbar) applied to the
  // empirical covariance of (a, b) over n.
  const double abar = sa / 5, bbar = sb / 5;
  double var = 0.0;
  for (int i = 0; i < 5; ++i) {
    const double dev = (a[i] - abar) / abar - (b[i] - bbar) / bbar;
    var += dev * dev;
  }
  var /= 25.0;
  const DebiasedEstimate est = sandwich_se(sys, theta);
  CHECK(est.sigma(0, 0) == doctest::Approx(var).epsilon(1e-12));
  CHECK(est.se(0) == doctest::Approx(std::sqrt(var)).epsilon(1e-12));

  SUBCASE("scaling every score leaves theta and Sigma unchanged") {
    std::vector<ScoreTerms> scaled;
    for (int i = 0; i < 5; ++i) scaled.push_back(toy_terms(7.3 * a[i], 7.3 * b[i]));
    const LinearScoreSystem s2(Route::g, scaled);
    const Eigen::VectorXd th2 = s2.solve();
    CHECK(th2(0) == doctest::Approx(theta(0)).epsilon(1e-13));
    CHECK(sandwich_se(s2, th2).sigma(0, 0) == doctest::Approx(est.sigma(0, 0)).epsilon(1e-12));
  }
  SUBCASE("t statistics against a reference") {
    const Eigen::VectorXd ref = theta;
    CHECK(sandwich_se(sys, theta, ref).t->cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("enumerable process: scores vanish at the truth and are orthogonal") {
  const testing::OrthogonalityReport r = testing::run_orthogonality_oracle();
  CHECK(r.g_mean <= 1e-8);
  CHECK(r.h_mean <= 1e-8);
  CHECK(r.g_deriv_f <= 1e-6);
  CHECK(r.g_deriv_g <= 1e-6);
  CHECK(r.h_deriv_formula <= 1e-8);
  CHECK(r.h_ratio_min >= 2.0 * 0.8);
  CHECK(r.h_ratio_max <= 2.0 * 1.2);
  CHECK(r.ml_over_h >= 10.0);
  CHECK(r.ml_deriv_min >= 10.0 * 1e-6);
}

TEST_CASE("enumerable process: path probabilities sum to one") {
  const auto e = testing::enumerate_paths(testing::EnumerableDgp{});
  double total = 0.0;
  for (double w : e.weight) total += w;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-14));
}
