#pragma once

// Data-parallel inner loops shared by the kernel engine and the likelihood.
//
// Every routine has a scalar reference implementation; an AVX2/FMA variant is
// compiled into a separate translation unit and chosen once at startup when the
// CPU reports support. Setting HAZARDML_SIMD=scalar forces the reference path.

#include <cstddef>
#include <span>
#include <string_view>

namespace hazardml::simd {

// Column-major view of a small point set: dims[l][i] is coordinate l of point i.
struct PointColumns {
  std::span<const double* const> dims;
  std::size_t count = 0;
};

struct KernelTable {
  std::string_view name;

  // out[i] = exp(-scale * sum_l (dims[l][i] - center[l])^2)
  void (*gaussian_column)(PointColumns points, std::span<const double> center,
                          double scale, double* out);
  // out[i] = sum_l dims[l][i] * center[l]
  void (*linear_column)(PointColumns points, std::span<const double> center,
                        double* out);
  // y[i] += a * x[i]
  void (*axpy)(double a, const double* x, double* y, std::size_t n);
  // y[i] -= x[i]^2
  void (*subtract_square)(const double* x, double* y, std::size_t n);
  double (*dot)(const double* x, const double* y, std::size_t n);
  // out[i] = exp(clamp(in[i], lo, hi)); returns how many inputs were clamped.
  std::size_t (*exp_clamped)(const double* in, double* out, std::size_t n,
                             double lo, double hi);
};

const KernelTable& scalar_kernels();
// nullptr when the variant was not compiled or the CPU lacks AVX2/FMA.
const KernelTable* avx2_kernels();

// The table used by the library (resolved once, thread-safe).
const KernelTable& active();

}  // namespace hazardml::simd
