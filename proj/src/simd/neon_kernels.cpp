// AArch64 Advanced SIMD variant. Built only when targeting arm64.

#include <arm_neon.h>

#include <cmath>

#include "detach/simd/kernels.hpp"
#include "kernel_variants.hpp"

namespace detach::simd::neon {
namespace {

double dot(const double* a, const double* b, std::size_t n) {
  float64x2_t acc0 = vdupq_n_f64(0.0);
  float64x2_t acc1 = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc0 = vfmaq_f64(acc0, vld1q_f64(a + i), vld1q_f64(b + i));
    acc1 = vfmaq_f64(acc1, vld1q_f64(a + i + 2), vld1q_f64(b + i + 2));
  }
  double acc = vaddvq_f64(vaddq_f64(acc0, acc1));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

inline void axpy_impl(double alpha, const double* x, double* y, std::size_t n) {
  const float64x2_t va = vdupq_n_f64(alpha);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    vst1q_f64(y + i, vfmaq_f64(vld1q_f64(y + i), va, vld1q_f64(x + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  axpy_impl(alpha, x, y, n);
}

void gemm_nn(const double* a, const double* b, double* c, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) axpy_impl(a[i * k + p], b + p * n, c + i * n, n);
  }
}

void gemm_nt(const double* a, const double* b, double* c, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) c[i * n + j] += dot(a + i * k, b + j * k, k);
  }
}

void gemm_tn(const double* a, const double* b, double* c, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t p = 0; p < m; ++p) {
    for (std::size_t i = 0; i < k; ++i) axpy_impl(a[p * k + i], b + p * n, c + i * n, n);
  }
}

void box_max_height(const double* xs, const double* ys, double* out,
                    std::size_t n, const BoxFootprint& box) {
  const float64x2_t cx = vdupq_n_f64(box.cx);
  const float64x2_t cy = vdupq_n_f64(box.cy);
  const float64x2_t cs = vdupq_n_f64(box.cos_yaw);
  const float64x2_t sn = vdupq_n_f64(box.sin_yaw);
  const float64x2_t nsn = vdupq_n_f64(-box.sin_yaw);
  const float64x2_t hx = vdupq_n_f64(box.half_x);
  const float64x2_t hy = vdupq_n_f64(box.half_y);
  const float64x2_t top = vdupq_n_f64(box.top);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    const float64x2_t dx = vsubq_f64(vld1q_f64(xs + i), cx);
    const float64x2_t dy = vsubq_f64(vld1q_f64(ys + i), cy);
    const float64x2_t lx = vaddq_f64(vmulq_f64(cs, dx), vmulq_f64(sn, dy));
    const float64x2_t ly = vaddq_f64(vmulq_f64(nsn, dx), vmulq_f64(cs, dy));
    const uint64x2_t inside =
        vandq_u64(vcleq_f64(vabsq_f64(lx), hx), vcleq_f64(vabsq_f64(ly), hy));
    const float64x2_t cur = vld1q_f64(out + i);
    const uint64x2_t take = vandq_u64(inside, vcgtq_f64(top, cur));
    vst1q_f64(out + i, vbslq_f64(take, top, cur));
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
  static const KernelTable t{Isa::kNeon, &dot,     &axpy,          &gemm_nn,
                             &gemm_nt,   &gemm_tn, &box_max_height};
  return t;
}

}  // namespace detach::simd::neon
