#include <atomic>
#include <cstdlib>
#include <string>

#include "detach/simd/kernels.hpp"
#include "kernel_variants.hpp"

namespace detach::simd {
namespace {

bool cpu_has_avx2() {
#if defined(DETACH_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable* select_default() {
  if (const char* env = std::getenv("DETACH_SIMD")) {
    const std::string want(env);
    if (want == "scalar") return &scalar_kernels();
    if (want == "avx2" && avx2_kernels()) return avx2_kernels();
    if (want == "neon" && neon_kernels()) return neon_kernels();
  }
  if (const KernelTable* t = avx2_kernels()) return t;
  if (const KernelTable* t = neon_kernels()) return t;
  return &scalar_kernels();
}

std::atomic<const KernelTable*>& active() {
  static std::atomic<const KernelTable*> table{select_default()};
  return table;
}

}  // namespace

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return "scalar";
    case Isa::kAvx2:
      return "avx2";
    case Isa::kNeon:
      return "neon";
  }
  return "unknown";
}

const KernelTable& kernels() { return *active().load(std::memory_order_acquire); }

const KernelTable& scalar_kernels() { return scalar::table(); }

const KernelTable* avx2_kernels() {
#if defined(DETACH_HAVE_AVX2)
  static const bool ok = cpu_has_avx2();
  return ok ? &avx2::table() : nullptr;
#else
  return nullptr;
#endif
}

const KernelTable* neon_kernels() {
#if defined(DETACH_HAVE_NEON)
  return &neon::table();
#else
  return nullptr;
#endif
}

bool force_isa(Isa isa) {
  const KernelTable* t = nullptr;
  switch (isa) {
    case Isa::kScalar:
      t = &scalar_kernels();
      break;
    case Isa::kAvx2:
      t = avx2_kernels();
      break;
    case Isa::kNeon:
      t = neon_kernels();
      break;
  }
  if (t == nullptr) return false;
  active().store(t, std::memory_order_release);
  return true;
}

}  // namespace detach::simd
