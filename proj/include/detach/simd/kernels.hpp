#pragma once

// Dense double-precision kernels behind a runtime-selected dispatch table.
//
// Every kernel has a scalar reference implementation. Vector variants (AVX2+FMA
// on x86-64, NEON on AArch64) are compiled into separate translation units and
// chosen once at startup from CPUID / the build target. The environment
// variable DETACH_SIMD=scalar|avx2|neon overrides the choice.
//
// All matrix kernels accumulate into the output (callers zero it first when a
// plain product is wanted). Matrices are dense row-major.

#include <cstddef>
#include <string_view>

namespace detach::simd {

enum class Isa { kScalar, kAvx2, kNeon };

std::string_view isa_name(Isa isa);

// Footprint of an oriented box projected onto the ground plane.
struct BoxFootprint {
  double cx = 0.0;
  double cy = 0.0;
  double cos_yaw = 1.0;
  double sin_yaw = 0.0;
  double half_x = 0.0;
  double half_y = 0.0;
  double top = 0.0;
};

struct KernelTable {
  Isa isa = Isa::kScalar;

  double (*dot)(const double* a, const double* b, std::size_t n) = nullptr;

  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n) = nullptr;

  // C[m,n] += A[m,k] * B[k,n]
  void (*gemm_nn)(const double* a, const double* b, double* c, std::size_t m,
                  std::size_t k, std::size_t n) = nullptr;

  // C[m,n] += A[m,k] * B[n,k]^T
  void (*gemm_nt)(const double* a, const double* b, double* c, std::size_t m,
                  std::size_t k, std::size_t n) = nullptr;

  // C[k,n] += A[m,k]^T * B[m,n]
  void (*gemm_tn)(const double* a, const double* b, double* c, std::size_t m,
                  std::size_t k, std::size_t n) = nullptr;

  // out[i] = max(out[i], box.top) for every point inside the footprint
  // (boundary inclusive).
  void (*box_max_height)(const double* xs, const double* ys, double* out,
                         std::size_t n, const BoxFootprint& box) = nullptr;
};

// Active table. Selected on first use.
const KernelTable& kernels();

const KernelTable& scalar_kernels();

// nullptr when the variant is not compiled in or the CPU lacks support.
const KernelTable* avx2_kernels();
const KernelTable* neon_kernels();

// Replaces the active table; returns false if the requested ISA is unavailable.
bool force_isa(Isa isa);

}  // namespace detach::simd
