#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "detach/simd/kernels.hpp"

namespace {

using detach::simd::BoxFootprint;
using detach::simd::KernelTable;

std::vector<const KernelTable*> variants() {
  std::vector<const KernelTable*> out{&detach::simd::scalar_kernels()};
  if (auto* t = detach::simd::avx2_kernels()) out.push_back(t);
  if (auto* t = detach::simd::neon_kernels()) out.push_back(t);
  return out;
}

std::vector<double> randn(std::mt19937_64& rng, std::size_t n) {
  std::normal_distribution<double> nd;
  std::vector<double> v(n);
  for (auto& x : v) x = nd(rng);
  return v;
}

// Plain triple loops, independent of any kernel.
void naive_nn(const std::vector<double>& a, const std::vector<double>& b, std::vector<double>& c,
              std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      long double s = 0;
      for (std::size_t p = 0; p < k; ++p) s += static_cast<long double>(a[i * k + p]) * b[p * n + j];
      c[i * n + j] += static_cast<double>(s);
    }
}

TEST(Simd, DotAndAxpyMatchNaiveAcrossLengths) {
  std::mt19937_64 rng(1);
  for (const KernelTable* t : variants()) {
    for (std::size_t n : {0u, 1u, 3u, 4u, 7u, 8u, 9u, 31u, 64u, 1001u}) {
      auto a = randn(rng, n), b = randn(rng, n);
      long double ref = 0;
      for (std::size_t i = 0; i < n; ++i) ref += static_cast<long double>(a[i]) * b[i];
      EXPECT_NEAR(t->dot(a.data(), b.data(), n), static_cast<double>(ref), 1e-12 * (1.0 + n))
          << detach::simd::isa_name(t->isa) << " n=" << n;
      auto y = randn(rng, n);
      auto y_ref = y;
      for (std::size_t i = 0; i < n; ++i) y_ref[i] += 0.37 * a[i];
      t->axpy(0.37, a.data(), y.data(), n);
      for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(y[i], y_ref[i], 1e-14);
    }
  }
}

TEST(Simd, GemmVariantsMatchNaive) {
  std::mt19937_64 rng(2);
  for (const KernelTable* t : variants()) {
    for (auto [m, k, n] : std::vector<std::array<std::size_t, 3>>{{1, 1, 1}, {3, 5, 7}, {8, 8, 8}, {13, 17, 5}, {2, 33, 9}}) {
      auto a = randn(rng, m * k), b = randn(rng, k * n);
      std::vector<double> c(m * n, 0.5), ref(m * n, 0.5);
      naive_nn(a, b, ref, m, k, n);
      t->gemm_nn(a.data(), b.data(), c.data(), m, k, n);
      for (std::size_t i = 0; i < m * n; ++i) EXPECT_NEAR(c[i], ref[i], 1e-12);

      // gemm_nt with B stored transposed.
      std::vector<double> bt(n * k);
      for (std::size_t p = 0; p < k; ++p)
        for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = b[p * n + j];
      std::vector<double> c2(m * n, 0.5);
      t->gemm_nt(a.data(), bt.data(), c2.data(), m, k, n);
      for (std::size_t i = 0; i < m * n; ++i) EXPECT_NEAR(c2[i], ref[i], 1e-12);

      // gemm_tn: C[k,n] += A^T B with A (m,k), B (m,n).
      auto bm = randn(rng, m * n);
      std::vector<double> at(k * m);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) at[p * m + i] = a[i * k + p];
      std::vector<double> c3(k * n, 0.0), ref3(k * n, 0.0);
      naive_nn(at, bm, ref3, k, m, n);
      t->gemm_tn(a.data(), bm.data(), c3.data(), m, k, n);
      for (std::size_t i = 0; i < k * n; ++i) EXPECT_NEAR(c3[i], ref3[i], 1e-12);
    }
  }
}

TEST(Simd, BoxMaxHeightBitwiseEqualToScalar) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  const auto& ref = detach::simd::scalar_kernels();
  for (int trial = 0; trial < 50; ++trial) {
    const double yaw = u(rng);
    BoxFootprint box{u(rng), u(rng), std::cos(yaw), std::sin(yaw), 0.2 + std::abs(u(rng)) / 3, 0.1 + std::abs(u(rng)) / 3, 0.8};
    const std::size_t n = 257;
    std::vector<double> xs(n), ys(n);
    for (std::size_t i = 0; i < n; ++i) {
      xs[i] = u(rng);
      ys[i] = u(rng);
    }
    // Points exactly on an edge are inside.
    xs[0] = box.cx + box.half_x * box.cos_yaw;
    ys[0] = box.cy + box.half_x * box.sin_yaw;
    std::vector<double> expect(n, 0.1);
    ref.box_max_height(xs.data(), ys.data(), expect.data(), n, box);
    for (const KernelTable* t : variants()) {
      std::vector<double> got(n, 0.1);
      t->box_max_height(xs.data(), ys.data(), got.data(), n, box);
      EXPECT_EQ(got, expect) << detach::simd::isa_name(t->isa);
    }
  }
}

TEST(Simd, AxisAlignedBoxBoundaryInclusive) {
  const auto& t = detach::simd::kernels();
  BoxFootprint box{0.0, 0.0, 1.0, 0.0, 0.5, 0.25, 0.35};
  std::vector<double> xs{0.5, 0.5001, 0.0, -0.5}, ys{0.25, 0.0, -0.2501, -0.25}, out(4, 0.0);
  t.box_max_height(xs.data(), ys.data(), out.data(), 4, box);
  EXPECT_EQ(out, (std::vector<double>{0.35, 0.0, 0.0, 0.35}));
}

TEST(Simd, ForceIsaSwitchesTable) {
  ASSERT_TRUE(detach::simd::force_isa(detach::simd::Isa::kScalar));
  EXPECT_EQ(detach::simd::kernels().isa, detach::simd::Isa::kScalar);
  if (detach::simd::avx2_kernels()) {
    ASSERT_TRUE(detach::simd::force_isa(detach::simd::Isa::kAvx2));
    EXPECT_EQ(detach::simd::kernels().isa, detach::simd::Isa::kAvx2);
  }
}

}  // namespace
