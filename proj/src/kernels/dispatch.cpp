#include <cstdlib>
#include <string_view>

#include "asymloc/kernels.hpp"

namespace asymloc::kernels {

const KernelTable* avx2_table_impl();

bool cpu_supports_avx2() {
#if defined(__x86_64__) || defined(_M_X64)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable* avx2_table() { return avx2_table_impl(); }

const KernelTable& active() {
  static const KernelTable& chosen = [] () -> const KernelTable& {
    const char* env = std::getenv("ASYMLOC_KERNELS");
    if (env != nullptr && std::string_view(env) == "scalar") return scalar_table();
    if (const KernelTable* t = avx2_table(); t != nullptr && cpu_supports_avx2()) return *t;
    return scalar_table();
  }();
  return chosen;
}

void gemm_nn(int m, int n, int k, const float* a, int lda, const float* b, int ldb, float* c,
             int ldc, bool accumulate) {
  active().gemm_nn(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}

void gemm_nt(int m, int n, int k, const float* a, int lda, const float* b, int ldb, float* c,
             int ldc, bool accumulate) {
  active().gemm_nt(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}

}  // namespace asymloc::kernels
