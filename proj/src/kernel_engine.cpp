#include "hazardml/kernel_engine.hpp"

#include <algorithm>
#include <cmath>

#include "hazardml/error.hpp"
#include "hazardml/simd/kernels.hpp"

namespace hazardml {
namespace {

double gaussian_scale(const KernelSpec& spec) { return 1.0 / (2.0 * spec.bandwidth * spec.bandwidth); }

// Column pointers of the kernel's inputs inside a column-major matrix.
std::vector<const double*> input_columns(const KernelSpec& spec, const Eigen::MatrixXd& m) {
  std::vector<const double*> cols;
  cols.reserve(spec.inputs.size());
  for (int c : spec.inputs) cols.push_back(m.col(c).data());
  return cols;
}

// out = k(points, center) for every row of `points`.
void kernel_column(const simd::KernelTable& kt, const KernelSpec& spec,
                   const std::vector<const double*>& cols, std::size_t count,
                   std::span<const double> center, double* out) {
  const simd::PointColumns pts{cols, count};
  if (spec.kind == KernelKind::gaussian)
    kt.gaussian_column(pts, center, gaussian_scale(spec), out);
  else
    kt.linear_column(pts, center, out);
}

}  // namespace

void KernelSpec::validate(int input_dim) const {
  if (inputs.empty()) throw UsageError("kernel needs at least one input");
  for (int c : inputs)
    if (c < 0 || c >= input_dim) throw UsageError("kernel input index " + std::to_string(c) + " out of range");
  if (kind == KernelKind::gaussian) {
    if (inputs.size() > 3) throw UsageError("gaussian kernels take 1 to 3 inputs");
    if (!(bandwidth > 0.0)) throw UsageError("gaussian bandwidth must be positive");
  }
  if (!(lambda >= 0.0)) throw UsageError("kernel lambda must be nonnegative");
}

double kernel_value(const KernelSpec& spec, const Eigen::Ref<const Eigen::RowVectorXd>& a,
                    const Eigen::Ref<const Eigen::RowVectorXd>& b) {
  double acc = 0.0;
  for (int c : spec.inputs) {
    if (spec.kind == KernelKind::gaussian) {
      const double diff = a(c) - b(c);
      acc += diff * diff;
    } else {
      acc += a(c) * b(c);
    }
  }
  return spec.kind == KernelKind::gaussian ? std::exp(-acc * gaussian_scale(spec)) : acc;
}

Eigen::MatrixXd gram(const KernelSpec& spec, const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const int width = static_cast<int>(std::min(a.cols(), b.cols()));
  spec.validate(width);
  Eigen::MatrixXd g(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.rows(); ++j) g(i, j) = kernel_value(spec, a.row(i), b.row(j));
  return g;
}

LowRankBasis incomplete_cholesky(const KernelSpec& spec, const Eigen::MatrixXd& inputs,
                                 double tol, Eigen::Index max_rank) {
  spec.validate(static_cast<int>(inputs.cols()));
  if (!(tol > 0.0)) throw UsageError("incomplete Cholesky tolerance must be positive");
  const simd::KernelTable& kt = simd::active();
  const Eigen::Index n = inputs.rows();
  const auto cols = input_columns(spec, inputs);
  const auto count = static_cast<std::size_t>(n);
  const Eigen::Index cap = max_rank < 0 ? n : std::min(max_rank, n);

  Eigen::VectorXd resid(n);
  if (spec.kind == KernelKind::gaussian) {
    resid.setOnes();
  } else {
    resid.setZero();
    for (int c : spec.inputs) resid += inputs.col(c).cwiseAbs2();
  }

  LowRankBasis basis;
  basis.spec = spec;
  std::vector<Eigen::VectorXd> columns;
  std::vector<double> center(spec.inputs.size());
  const double stop = tol * static_cast<double>(n);

  while (true) {
    const double trace = resid.sum();
    basis.residual_trace.push_back(trace);
    if (trace <= stop || static_cast<Eigen::Index>(columns.size()) >= cap) break;
    Eigen::Index j = 0;
    const double pivot_value = resid.maxCoeff(&j);
    if (!(pivot_value > 1e-14)) break;

    for (std::size_t l = 0; l < spec.inputs.size(); ++l) center[l] = inputs(j, spec.inputs[l]);
    Eigen::VectorXd col(n);
    kernel_column(kt, spec, cols, count, center, col.data());
    for (const auto& prev : columns) kt.axpy(-prev(j), prev.data(), col.data(), count);
    col /= std::sqrt(pivot_value);
    // Entries at earlier pivots are zero in exact arithmetic; pin them so L(I,:) is triangular.
    for (Eigen::Index p : basis.pivots) col(p) = 0.0;
    kt.subtract_square(col.data(), resid.data(), count);
    resid = resid.cwiseMax(0.0);
    resid(j) = 0.0;
    for (Eigen::Index p : basis.pivots) resid(p) = 0.0;

    basis.pivots.push_back(j);
    columns.push_back(std::move(col));
  }

  const auto r = static_cast<Eigen::Index>(columns.size());
  basis.L.resize(n, r);
  for (Eigen::Index c = 0; c < r; ++c) basis.L.col(c) = columns[static_cast<std::size_t>(c)];
  basis.anchors.resize(r, static_cast<Eigen::Index>(spec.inputs.size()));
  for (Eigen::Index c = 0; c < r; ++c)
    for (std::size_t l = 0; l < spec.inputs.size(); ++l)
      basis.anchors(c, static_cast<Eigen::Index>(l)) =
          inputs(basis.pivots[static_cast<std::size_t>(c)], spec.inputs[l]);
  return basis;
}

Eigen::VectorXd KernelExpansion::evaluate(const Eigen::MatrixXd& inputs) const {
  const simd::KernelTable& kt = simd::active();
  const auto count = static_cast<std::size_t>(inputs.rows());
  Eigen::VectorXd out = Eigen::VectorXd::Zero(inputs.rows());
  if (coef.size() == 0) return out;
  const auto cols = input_columns(spec, inputs);
  if (spec.kind == KernelKind::linear) {
    // Linear kernels collapse to a single weight vector.
    const Eigen::VectorXd weight = anchors.transpose() * coef;
    kt.linear_column(simd::PointColumns{cols, count},
                     std::span<const double>(weight.data(), static_cast<std::size_t>(weight.size())),
                     out.data());
    return out;
  }
  Eigen::VectorXd col(inputs.rows());
  std::vector<double> center(spec.inputs.size());
  for (Eigen::Index a = 0; a < anchors.rows(); ++a) {
    for (std::size_t l = 0; l < center.size(); ++l) center[l] = anchors(a, static_cast<Eigen::Index>(l));
    kernel_column(kt, spec, cols, count, center, col.data());
    kt.axpy(coef(a), col.data(), out.data(), count);
  }
  return out;
}

KernelExpansion expansion_from_basis(const LowRankBasis& basis, const Eigen::VectorXd& u) {
  if (u.size() != basis.rank()) throw UsageError("coefficient length does not match basis rank");
  KernelExpansion e;
  e.spec = basis.spec;
  e.anchors = basis.anchors;
  const Eigen::Index r = basis.rank();
  if (r == 0) {
    e.coef.resize(0);
    return e;
  }
  Eigen::MatrixXd t(r, r);
  for (Eigen::Index c = 0; c < r; ++c) t.row(c) = basis.L.row(basis.pivots[static_cast<std::size_t>(c)]);
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(t.transpose());
  qr.setThreshold(basis.pinv_tol);
  if (qr.rank() < r)
    throw NumericalError("transfer basis lost rank (" + std::to_string(qr.rank()) + " of " +
                         std::to_string(r) + ") below pseudoinverse tolerance");
  e.coef = qr.solve(u);
  return e;
}

TransferResult transfer_coefficients(const LowRankBasis& train, const Eigen::VectorXd& u_hat,
                                     const Eigen::MatrixXd& rows_new, const LowRankBasis* combined) {
  TransferResult out;
  out.expansion = expansion_from_basis(train, u_hat);
  out.values = out.expansion.evaluate(rows_new);
  if (combined != nullptr) {
    if (combined->L.rows() != rows_new.rows())
      throw UsageError("combined basis rows must match rows_new");
    if (combined->rank() == 0)
      out.u_bar.resize(0);
    else
      out.u_bar = combined->L.colPivHouseholderQr().solve(out.values);
  }
  return out;
}

Eigen::VectorXd Design::penalty_weights() const {
  Eigen::VectorXd w = Eigen::VectorXd::Zero(width());
  for (std::size_t k = 0; k < bases.size(); ++k)
    w.segment(offsets[k], bases[k].rank()).setConstant(bases[k].spec.lambda);
  return w;
}

Design build_design(const std::vector<KernelSpec>& kernels, const Eigen::MatrixXd& inputs,
                    double tol, Eigen::Index max_rank) {
  Design d;
  Eigen::Index width = 1;
  for (const auto& spec : kernels) {
    Eigen::Index cap = max_rank;
    if (spec.max_rank >= 0) cap = cap < 0 ? spec.max_rank : std::min(cap, spec.max_rank);
    d.bases.push_back(incomplete_cholesky(spec, inputs, tol, cap));
    d.offsets.push_back(width - 1);
    width += d.bases.back().rank();
  }
  d.offsets.push_back(width - 1);
  d.phi.resize(inputs.rows(), width);
  for (std::size_t k = 0; k < d.bases.size(); ++k)
    d.phi.middleCols(d.offsets[k], d.bases[k].rank()) = d.bases[k].L;
  d.phi.col(width - 1).setOnes();
  return d;
}

FunctionExpansion expansion_from_design(const Design& design, const Eigen::VectorXd& w) {
  if (w.size() != design.width()) throw UsageError("coefficient length does not match design width");
  FunctionExpansion f;
  for (std::size_t k = 0; k < design.bases.size(); ++k)
    f.blocks.push_back(expansion_from_basis(design.bases[k], w.segment(design.offsets[k], design.bases[k].rank())));
  f.bias = w(design.bias_column());
  return f;
}

Eigen::VectorXd FunctionExpansion::evaluate(const Eigen::MatrixXd& inputs) const {
  Eigen::VectorXd out = Eigen::VectorXd::Constant(inputs.rows(), bias);
  for (const auto& b : blocks) out += b.evaluate(inputs);
  return out;
}

}  // namespace hazardml
