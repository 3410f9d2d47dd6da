#include <cstdlib>
#include <string_view>

#include "rmt/kernels.hpp"

namespace rmt::kernels {

#ifdef RMT_HAVE_AVX2
extern const KernelTable kAvx2Table;
#endif

const KernelTable* avx2() {
#ifdef RMT_HAVE_AVX2
  static const bool supported = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  return supported ? &kAvx2Table : nullptr;
#else
  return nullptr;
#endif
}

const KernelTable& active() {
  static const KernelTable& table = [] () -> const KernelTable& {
    const char* forced = std::getenv("RMT_KERNELS");
    if (forced && std::string_view(forced) == "scalar") return scalar();
    if (const KernelTable* v = avx2()) return *v;
    return scalar();
  }();
  return table;
}

}  // namespace rmt::kernels
