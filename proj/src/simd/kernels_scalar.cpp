#include "hazardml/simd/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace hazardml::simd {
namespace {

void gaussian_column(PointColumns points, std::span<const double> center,
                     double scale, double* out) {
  const std::size_t n = points.count;
  std::fill(out, out + n, 0.0);
  for (std::size_t l = 0; l < points.dims.size(); ++l) {
    const double* x = points.dims[l];
    const double c = center[l];
    for (std::size_t i = 0; i < n; ++i) {
      const double diff = x[i] - c;
      out[i] += diff * diff;
    }
  }
  for (std::size_t i = 0; i < n; ++i) out[i] = std::exp(-scale * out[i]);
}

void linear_column(PointColumns points, std::span<const double> center, double* out) {
  const std::size_t n = points.count;
  std::fill(out, out + n, 0.0);
  for (std::size_t l = 0; l < points.dims.size(); ++l) {
    const double* x = points.dims[l];
    const double c = center[l];
    for (std::size_t i = 0; i < n; ++i) out[i] += x[i] * c;
  }
}

void axpy(double a, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void subtract_square(const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] -= x[i] * x[i];
}

double dot(const double* x, const double* y, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

std::size_t exp_clamped(const double* in, double* out, std::size_t n, double lo,
                        double hi) {
  std::size_t clamped = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double v = in[i];
    if (v > hi) {
      v = hi;
      ++clamped;
    } else if (v < lo) {
      v = lo;
      ++clamped;
    }
    out[i] = std::exp(v);
  }
  return clamped;
}

}  // namespace

const KernelTable& scalar_kernels() {
  static const KernelTable table{"scalar",        gaussian_column, linear_column, axpy,
                                 subtract_square, dot,             exp_clamped};
  return table;
}

}  // namespace hazardml::simd
