// AVX2/FMA variants. This file is compiled with -mavx2 -mfma and must only be
// entered through avx2_kernels(), which checks the CPU first.

#include <immintrin.h>

#include <algorithm>
#include <bit>
#include <cmath>

#include "hazardml/simd/kernels.hpp"

namespace hazardml::simd {
namespace {

// exp on four lanes: x = n ln2 + r, |r| <= ln2/2, e^r by a degree-12 Taylor
// polynomial (truncation < 2e-16 relative), 2^n assembled in the exponent bits.
// Inputs must already lie in [-708, 709].
inline __m256d exp4(__m256d x) {
  const __m256d log2e = _mm256_set1_pd(1.4426950408889634);
  const __m256d ln2_hi = _mm256_set1_pd(0.693145751953125);
  const __m256d ln2_lo = _mm256_set1_pd(1.42860682030941723212e-6);

  const __m256d n = _mm256_round_pd(_mm256_mul_pd(x, log2e),
                                    _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
  __m256d r = _mm256_fnmadd_pd(n, ln2_hi, x);
  r = _mm256_fnmadd_pd(n, ln2_lo, r);

  static constexpr double kInvFact[] = {
      1.0 / 479001600.0, 1.0 / 39916800.0, 1.0 / 3628800.0, 1.0 / 362880.0,
      1.0 / 40320.0,     1.0 / 5040.0,     1.0 / 720.0,     1.0 / 120.0,
      1.0 / 24.0,        1.0 / 6.0,        0.5,             1.0,
      1.0};
  __m256d p = _mm256_set1_pd(kInvFact[0]);
  for (int k = 1; k < 13; ++k) p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(kInvFact[k]));

  const __m128i n32 = _mm256_cvtpd_epi32(n);
  __m256i bits = _mm256_cvtepi32_epi64(n32);
  bits = _mm256_add_epi64(bits, _mm256_set1_epi64x(1023));
  bits = _mm256_slli_epi64(bits, 52);
  return _mm256_mul_pd(p, _mm256_castsi256_pd(bits));
}

void gaussian_column(PointColumns points, std::span<const double> center,
                     double scale, double* out) {
  const std::size_t n = points.count;
  const std::size_t dims = points.dims.size();
  const __m256d neg_scale = _mm256_set1_pd(-scale);
  const __m256d floor_arg = _mm256_set1_pd(-708.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d acc = _mm256_setzero_pd();
    for (std::size_t l = 0; l < dims; ++l) {
      const __m256d diff = _mm256_sub_pd(_mm256_loadu_pd(points.dims[l] + i),
                                         _mm256_set1_pd(center[l]));
      acc = _mm256_fmadd_pd(diff, diff, acc);
    }
    const __m256d arg = _mm256_max_pd(_mm256_mul_pd(neg_scale, acc), floor_arg);
    _mm256_storeu_pd(out + i, exp4(arg));
  }
  for (; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t l = 0; l < dims; ++l) {
      const double diff = points.dims[l][i] - center[l];
      acc += diff * diff;
    }
    out[i] = std::exp(-scale * acc);
  }
}

void linear_column(PointColumns points, std::span<const double> center, double* out) {
  const std::size_t n = points.count;
  const std::size_t dims = points.dims.size();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d acc = _mm256_setzero_pd();
    for (std::size_t l = 0; l < dims; ++l)
      acc = _mm256_fmadd_pd(_mm256_loadu_pd(points.dims[l] + i),
                            _mm256_set1_pd(center[l]), acc);
    _mm256_storeu_pd(out + i, acc);
  }
  for (; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t l = 0; l < dims; ++l) acc += points.dims[l][i] * center[l];
    out[i] = acc;
  }
}

void axpy(double a, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] += a * x[i];
}

void subtract_square(const double* x, double* y, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d vx = _mm256_loadu_pd(x + i);
    _mm256_storeu_pd(y + i, _mm256_fnmadd_pd(vx, vx, _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] -= x[i] * x[i];
}

double dot(const double* x, const double* y, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4)
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
  alignas(32) double lanes[4];
  _mm256_store_pd(lanes, _mm256_add_pd(acc0, acc1));
  double s = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

std::size_t exp_clamped(const double* in, double* out, std::size_t n, double lo,
                        double hi) {
  // exp4 needs its argument inside the finite double range.
  const __m256d vlo = _mm256_set1_pd(std::max(lo, -708.0));
  const __m256d vhi = _mm256_set1_pd(std::min(hi, 709.0));
  std::size_t clamped = 0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d v = _mm256_loadu_pd(in + i);
    const int outside = _mm256_movemask_pd(
        _mm256_or_pd(_mm256_cmp_pd(v, _mm256_set1_pd(hi), _CMP_GT_OQ),
                     _mm256_cmp_pd(v, _mm256_set1_pd(lo), _CMP_LT_OQ)));
    clamped += static_cast<std::size_t>(std::popcount(static_cast<unsigned>(outside)));
    _mm256_storeu_pd(out + i, exp4(_mm256_min_pd(_mm256_max_pd(v, vlo), vhi)));
  }
  for (; i < n; ++i) {
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

const KernelTable& avx2_kernel_table() {
  static const KernelTable table{"avx2",          gaussian_column, linear_column, axpy,
                                 subtract_square, dot,             exp_clamped};
  return table;
}

}  // namespace hazardml::simd
