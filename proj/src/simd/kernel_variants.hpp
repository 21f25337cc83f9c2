#pragma once

#include "detach/simd/kernels.hpp"

namespace detach::simd {

namespace scalar {
const KernelTable& table();
}

#if defined(DETACH_HAVE_AVX2)
namespace avx2 {
const KernelTable& table();
}
#endif

#if defined(DETACH_HAVE_NEON)
namespace neon {
const KernelTable& table();
}
#endif

}  // namespace detach::simd
