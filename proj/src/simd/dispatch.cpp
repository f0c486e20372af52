#include <cstdlib>
#include <string_view>

#include "hazardml/simd/kernels.hpp"

namespace hazardml::simd {

#ifdef HAZARDML_HAVE_AVX2
const KernelTable& avx2_kernel_table();
#endif

const KernelTable* avx2_kernels() {
#ifdef HAZARDML_HAVE_AVX2
  static const bool supported = [] {
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  }();
  return supported ? &avx2_kernel_table() : nullptr;
#else
  return nullptr;
#endif
}

const KernelTable& active() {
  static const KernelTable& table = []() -> const KernelTable& {
    if (const char* env = std::getenv("HAZARDML_SIMD");
        env != nullptr && std::string_view(env) == "scalar")
      return scalar_kernels();
    if (const KernelTable* fast = avx2_kernels()) return *fast;
    return scalar_kernels();
  }();
  return table;
}

}  // namespace hazardml::simd
