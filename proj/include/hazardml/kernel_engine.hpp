#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

namespace hazardml {

enum class KernelKind { linear, gaussian };

struct KernelSpec {
  KernelKind kind = KernelKind::gaussian;
  std::vector<int> inputs;  // columns of the row input matrix (covariates, then elapsed time)
  double bandwidth = 1.0;   // sigma, gaussian only
  double lambda = 1.0;      // ridge weight on this block's coefficients
  Eigen::Index max_rank = -1;  // cap on the low-rank basis width (< 0: none)

  // Throws UsageError when the KernelSpec is malformed for an input matrix of `input_dim` columns.
  void validate(int input_dim) const;
  int dimension() const { return static_cast<int>(inputs.size()); }
};

double kernel_value(const KernelSpec& spec, const Eigen::Ref<const Eigen::RowVectorXd>& a,
                    const Eigen::Ref<const Eigen::RowVectorXd>& b);

// Dense Gram matrix between the rows of `a` and `b` (both full input matrices).
Eigen::MatrixXd gram(const KernelSpec& spec, const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

// G ~= L L' by greedy pivoted (incomplete) Cholesky.
struct LowRankBasis {
  KernelSpec spec;
  Eigen::MatrixXd L;                    // N x r
  std::vector<Eigen::Index> pivots;     // anchor rows, in pivot order
  Eigen::MatrixXd anchors;              // r x dim, kernel inputs of the anchor rows
  std::vector<double> residual_trace;   // trace(G - L L') before each pivot and at exit
  double pinv_tol = 1e-10;

  Eigen::Index rank() const { return L.cols(); }
};

inline constexpr double kDefaultIcholTol = 1e-3;

// Stops once trace(G - L L') <= tol * N, when the residual vanishes, or at max_rank (< 0: none).
LowRankBasis incomplete_cholesky(const KernelSpec& spec, const Eigen::MatrixXd& inputs,
                                 double tol = kDefaultIcholTol, Eigen::Index max_rank = -1);

// f(x) = sum_j coef_j k(x, anchor_j).
struct KernelExpansion {
  KernelSpec spec;
  Eigen::MatrixXd anchors;  // r x dim
  Eigen::VectorXd coef;

  Eigen::VectorXd evaluate(const Eigen::MatrixXd& inputs) const;
};

// Coefficients alpha with L u = G(:, anchors) alpha on the basis rows. Because
// L = G(:, I) T^{-T} with T = L(I, :), alpha = T^{-T} u, solved by column-pivoted QR;
// throws NumericalError when T loses rank below pinv_tol.
KernelExpansion expansion_from_basis(const LowRankBasis& basis, const Eigen::VectorXd& u);

struct TransferResult {
  KernelExpansion expansion;
  Eigen::VectorXd values;  // f on rows_new
  Eigen::VectorXd u_bar;   // least-squares coordinates in the combined basis (empty if none)
};

// Moves a fitted block onto new rows. When `combined` is given its rows must be
// rows_new, and u_bar solves min ||L_bar u_bar - values||.
TransferResult transfer_coefficients(const LowRankBasis& train, const Eigen::VectorXd& u_hat,
                                     const Eigen::MatrixXd& rows_new,
                                     const LowRankBasis* combined = nullptr);

// Concatenated multi-kernel design: Phi = [L_1 | ... | L_m | 1].
struct Design {
  std::vector<LowRankBasis> bases;
  Eigen::MatrixXd phi;
  std::vector<Eigen::Index> offsets;  // start column of each block; offsets.back() is the bias column

  Eigen::Index width() const { return phi.cols(); }
  Eigen::Index bias_column() const { return phi.cols() - 1; }
  // Ridge weight per column of phi (bias column 0).
  Eigen::VectorXd penalty_weights() const;
};

Design build_design(const std::vector<KernelSpec>& kernels, const Eigen::MatrixXd& inputs,
                    double tol = kDefaultIcholTol, Eigen::Index max_rank = -1);

// Splits design coordinates w (length width()) into per-kernel expansions plus the bias.
struct FunctionExpansion {
  std::vector<KernelExpansion> blocks;
  double bias = 0.0;

  Eigen::VectorXd evaluate(const Eigen::MatrixXd& inputs) const;
};

FunctionExpansion expansion_from_design(const Design& design, const Eigen::VectorXd& w);

}  // namespace hazardml
