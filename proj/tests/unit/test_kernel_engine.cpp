#include <cmath>

#include <Eigen/Eigenvalues>

#include "doctest.h"
#include "hazardml/error.hpp"
#include "hazardml/kernel_engine.hpp"
#include "hazardml/rng.hpp"

using namespace hazardml;

namespace {

Eigen::MatrixXd random_inputs(Eigen::Index n, Eigen::Index cols, std::uint64_t seed) {
  PhiloxStream rng(seed, 0, 0);
  Eigen::MatrixXd m(n, cols);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.normal();
  return m;
}

KernelSpec gauss(std::vector<int> inputs, double sigma) {
  KernelSpec k;
  k.kind = KernelKind::gaussian;
  k.inputs = std::move(inputs);
  k.bandwidth = sigma;
  return k;
}

}  // namespace

TEST_CASE("gram closed forms") {
  Eigen::MatrixXd a(1, 1), b(1, 1);
  a << 0.7;
  CHECK(gram(gauss({0}, 1.0), a, a)(0, 0) == 1.0);

  KernelSpec lin;
  lin.kind = KernelKind::linear;
  lin.inputs = {0};
  a << 2.0;
  b << 3.0;
  CHECK(gram(lin, a, b)(0, 0) == 6.0);

  const double sigma = 0.8;
  a << 1.0;
  b << 1.0 + sigma;
  CHECK(gram(gauss({0}, sigma), a, b)(0, 0) == doctest::Approx(std::exp(-0.5)).epsilon(1e-15));
}

TEST_CASE("gram errors") {
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(2, 2);
  CHECK_THROWS_AS(gram(gauss({0}, 0.0), a, a), UsageError);
  CHECK_THROWS_AS(gram(gauss({2}, 1.0), a, a), UsageError);
  CHECK_THROWS_AS(gram(gauss({0, 1, 0, 1}, 1.0), a, a), UsageError);
}

TEST_CASE("gram matrices are positive semidefinite") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Eigen::MatrixXd x = random_inputs(static_cast<Eigen::Index>(20 * seed), 3, seed);
    for (const KernelSpec& k : {gauss({0}, 0.3), gauss({0, 1}, 1.0), gauss({0, 1, 2}, 2.0)}) {
      const Eigen::MatrixXd g = gram(k, x, x);
      CHECK((g - g.transpose()).norm() == 0.0);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g);
      CHECK(es.eigenvalues().minCoeff() >= -1e-8);
    }
  }
}

TEST_CASE("incomplete Cholesky") {
  SUBCASE("identical rows give rank one") {
    Eigen::MatrixXd x = Eigen::MatrixXd::Constant(30, 1, 0.4);
    const LowRankBasis b = incomplete_cholesky(gauss({0}, 1.0), x);
    CHECK(b.rank() == 1);
  }

  SUBCASE("default tolerance is 0.001 and the trace bound holds") {
    CHECK(kDefaultIcholTol == 0.001);
    const Eigen::MatrixXd x = random_inputs(50, 1, 3);
    const KernelSpec k = gauss({0}, 0.5);
    const LowRankBasis b = incomplete_cholesky(k, x);
    const Eigen::MatrixXd g = gram(k, x, x);
    const Eigen::MatrixXd resid = g - b.L * b.L.transpose();
    CHECK(resid.trace() <= 0.001 * 50 + 1e-12);
    CHECK(resid.trace() == doctest::Approx(b.residual_trace.back()).epsilon(1e-8));
    // The residual is PSD, so its Frobenius norm is bounded by its trace.
    CHECK(resid.norm() <= resid.trace() + 1e-10);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(resid);
    CHECK(es.eigenvalues().minCoeff() >= -1e-10);
    for (std::size_t i = 1; i < b.residual_trace.size(); ++i)
      CHECK(b.residual_trace[i] <= b.residual_trace[i - 1] + 1e-12);
  }

  SUBCASE("run to full rank it reproduces the dense factorization") {
    const Eigen::MatrixXd x = random_inputs(15, 2, 4);
    const KernelSpec k = gauss({0, 1}, 1.5);
    const LowRankBasis b = incomplete_cholesky(k, x, 1e-15);
    const Eigen::MatrixXd g = gram(k, x, x);
    CHECK((g - b.L * b.L.transpose()).norm() < 1e-8);
    // Dense oracle: the pivoted rows of L form the Cholesky factor of G(I, I).
    const Eigen::Index r = b.rank();
    Eigen::MatrixXd gp(r, r), lp(r, r);
    for (Eigen::Index i = 0; i < r; ++i)
      for (Eigen::Index j = 0; j < r; ++j) gp(i, j) = g(b.pivots[i], b.pivots[j]);
    for (Eigen::Index i = 0; i < r; ++i) lp.row(i) = b.L.row(b.pivots[i]);
    const Eigen::MatrixXd dense = gp.llt().matrixL();
    CHECK((dense - lp).norm() < 1e-6);
  }

  SUBCASE("max_rank caps the basis") {
    const Eigen::MatrixXd x = random_inputs(40, 1, 5);
    CHECK(incomplete_cholesky(gauss({0}, 0.2), x, 1e-3, 4).rank() == 4);
    CHECK(incomplete_cholesky(gauss({0}, 0.2), x, 1e-3, 0).rank() == 0);
  }
}

TEST_CASE("transfer coefficients") {
  const Eigen::MatrixXd train = random_inputs(60, 2, 6);
  const Eigen::MatrixXd fresh = random_inputs(25, 2, 7);
  const KernelSpec k = gauss({0, 1}, 0.9);
  const LowRankBasis b = incomplete_cholesky(k, train);
  PhiloxStream rng(1, 0, 0);
  Eigen::VectorXd u(b.rank());
  for (auto& v : u) v = rng.normal();

  SUBCASE("identity transfer") {
    const TransferResult t = transfer_coefficients(b, u, train);
    CHECK((t.values - b.L * u).cwiseAbs().maxCoeff() <= 1e-8);
  }
  SUBCASE("zero coefficients") {
    const TransferResult t = transfer_coefficients(b, Eigen::VectorXd::Zero(b.rank()), fresh);
    CHECK(t.values.cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("dense kernel oracle at new rows") {
    const TransferResult t = transfer_coefficients(b, u, fresh);
    for (Eigen::Index i = 0; i < fresh.rows(); ++i) {
      double direct = 0.0;
      for (Eigen::Index j = 0; j < b.rank(); ++j)
        direct += t.expansion.coef(j) * kernel_value(k, fresh.row(i), train.row(b.pivots[j]));
      CHECK(std::abs(direct - t.values(i)) <= 1e-8);
    }
  }
  SUBCASE("combined basis coordinates reproduce the values") {
    Eigen::MatrixXd all(train.rows() + fresh.rows(), 2);
    all << train, fresh;
    const LowRankBasis combined = incomplete_cholesky(k, all, 1e-10);
    const TransferResult t = transfer_coefficients(b, u, all, &combined);
    CHECK((combined.L * t.u_bar - t.values).norm() <= 1e-4 * (1.0 + t.values.norm()));
  }
}

TEST_CASE("multi-kernel design sums the per-kernel functions") {
  const Eigen::MatrixXd x = random_inputs(40, 3, 8);
  KernelSpec lin;
  lin.kind = KernelKind::linear;
  lin.inputs = {2};
  lin.lambda = 0.0;
  const std::vector<KernelSpec> ks{gauss({0}, 0.7), gauss({1}, 1.2), lin};
  const Design d = build_design(ks, x);
  CHECK(d.phi.col(d.bias_column()).isOnes());
  PhiloxStream rng(3, 0, 0);
  Eigen::VectorXd w(d.width());
  for (auto& v : w) v = rng.normal();
  const FunctionExpansion f = expansion_from_design(d, w);
  Eigen::VectorXd per_kernel = Eigen::VectorXd::Constant(x.rows(), f.bias);
  for (const auto& blk : f.blocks) per_kernel += blk.evaluate(x);
  CHECK((per_kernel - d.phi * w).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((f.evaluate(x) - d.phi * w).cwiseAbs().maxCoeff() < 1e-9);
  const Eigen::VectorXd pw = d.penalty_weights();
  CHECK(pw(d.bias_column()) == 0.0);
  CHECK(pw(d.offsets[2]) == 0.0);
  CHECK(pw(0) == 1.0);
}
