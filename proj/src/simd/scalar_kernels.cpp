#include <cmath>

#include "detach/simd/kernels.hpp"
#include "kernel_variants.hpp"

namespace detach::simd::scalar {

double dot(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void gemm_nn(const double* a, const double* b, double* c, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
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
    for (std::size_t i = 0; i < k; ++i) {
      const double av = arow[i];
      double* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void box_max_height(const double* xs, const double* ys, double* out,
                    std::size_t n, const BoxFootprint& box) {
  for (std::size_t i = 0; i < n; ++i) {
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

const KernelTable& table() {
  static const KernelTable t{Isa::kScalar, &dot,     &axpy,          &gemm_nn,
                             &gemm_nt,     &gemm_tn, &box_max_height};
  return t;
}

}  // namespace detach::simd::scalar
