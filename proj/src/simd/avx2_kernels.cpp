// Compiled with -mavx2 -mfma. Only reached through the dispatch table after a
// CPUID check, so nothing here may be inlined into generic code.

#include <immintrin.h>

#include <cmath>

#include "detach/simd/kernels.hpp"
#include "kernel_variants.hpp"

namespace detach::simd::avx2 {
namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

double dot(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4),
                           acc1);
  }
  for (; i + 4 <= n; i += 4) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  }
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

inline void axpy_impl(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i),
                                            _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  axpy_impl(alpha, x, y, n);
}

void gemm_nn(const double* a, const double* b, double* c, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      axpy_impl(a[i * k + p], b + p * n, crow, n);
    }
  }
}

void gemm_nt(const double* a, const double* b, double* c, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      c[i * n + j] += dot(a + i * k, b + j * k, k);
    }
  }
}

void gemm_tn(const double* a, const double* b, double* c, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t p = 0; p < m; ++p) {
    const double* arow = a + p * k;
    const double* brow = b + p * n;
    for (std::size_t i = 0; i < k; ++i) axpy_impl(arow[i], brow, c + i * n, n);
  }
}

void box_max_height(const double* xs, const double* ys, double* out,
                    std::size_t n, const BoxFootprint& box) {
  const __m256d cx = _mm256_set1_pd(box.cx);
  const __m256d cy = _mm256_set1_pd(box.cy);
  const __m256d cs = _mm256_set1_pd(box.cos_yaw);
  const __m256d sn = _mm256_set1_pd(box.sin_yaw);
  const __m256d hx = _mm256_set1_pd(box.half_x);
  const __m256d hy = _mm256_set1_pd(box.half_y);
  const __m256d top = _mm256_set1_pd(box.top);
  const __m256d sign = _mm256_set1_pd(-0.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d dx = _mm256_sub_pd(_mm256_loadu_pd(xs + i), cx);
    const __m256d dy = _mm256_sub_pd(_mm256_loadu_pd(ys + i), cy);
    // Same operation order as the scalar reference so boundary cases agree.
    const __m256d lx = _mm256_add_pd(_mm256_mul_pd(cs, dx), _mm256_mul_pd(sn, dy));
    const __m256d ly = _mm256_add_pd(_mm256_mul_pd(_mm256_xor_pd(sn, sign), dx),
                                     _mm256_mul_pd(cs, dy));
    const __m256d ax = _mm256_andnot_pd(sign, lx);
    const __m256d ay = _mm256_andnot_pd(sign, ly);
    const __m256d cur = _mm256_loadu_pd(out + i);
    const __m256d inside = _mm256_and_pd(_mm256_cmp_pd(ax, hx, _CMP_LE_OQ),
                                         _mm256_cmp_pd(ay, hy, _CMP_LE_OQ));
    const __m256d higher = _mm256_cmp_pd(top, cur, _CMP_GT_OQ);
    _mm256_storeu_pd(out + i,
                     _mm256_blendv_pd(cur, top, _mm256_and_pd(inside, higher)));
  }
  for (; i < n; ++i) {
    const double dx = xs[i] - box.cx;
    const double dy = ys[i] - box.cy;
    const double lx = box.cos_yaw * dx + box.sin_yaw * dy;
    const double ly = -box.sin_yaw * dx + box.cos_yaw * dy;
    if (std::fabs(lx) <= box.half_x && std::fabs(ly) <= box.half_y &&
        box.top > out[i]) {
      out[i] = box.top;
    }
  }
}

}  // namespace

const KernelTable& table() {
  static const KernelTable t{Isa::kAvx2, &dot,     &axpy,          &gemm_nn,
                             &gemm_nt,   &gemm_tn, &box_max_height};
  return t;
}

}  // namespace detach::simd::avx2
