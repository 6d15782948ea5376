#include <algorithm>

#include "asymloc/kernels.hpp"

namespace asymloc::kernels {

namespace {

template <typename T>
void ref_gemm_nn(int m, int n, int k, const T* a, int lda, const T* b, int ldb, T* c, int ldc,
                 bool accumulate) {
  for (int i = 0; i < m; ++i) {
    T* crow = c + static_cast<std::ptrdiff_t>(i) * ldc;
    if (!accumulate) std::fill(crow, crow + n, T(0));
    for (int p = 0; p < k; ++p) {
      const T av = a[static_cast<std::ptrdiff_t>(i) * lda + p];
      if (av == T(0)) continue;
      const T* brow = b + static_cast<std::ptrdiff_t>(p) * ldb;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void ref_gemm_nt(int m, int n, int k, const T* a, int lda, const T* b, int ldb, T* c, int ldc,
                 bool accumulate) {
  for (int i = 0; i < m; ++i) {
    const T* arow = a + static_cast<std::ptrdiff_t>(i) * lda;
    for (int j = 0; j < n; ++j) {
      const T* brow = b + static_cast<std::ptrdiff_t>(j) * ldb;
      T s = 0;
      for (int p = 0; p < k; ++p) s += arow[p] * brow[p];
      T& out = c[static_cast<std::ptrdiff_t>(i) * ldc + j];
      out = accumulate ? out + s : s;
    }
  }
}

void scalar_gemm_nn(int m, int n, int k, const float* a, int lda, const float* b, int ldb,
                    float* c, int ldc, bool accumulate) {
  ref_gemm_nn(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}

void scalar_gemm_nt(int m, int n, int k, const float* a, int lda, const float* b, int ldb,
                    float* c, int ldc, bool accumulate) {
  ref_gemm_nt(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}

double scalar_dot_acc64(const float* a, const float* b, int n) {
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return s;
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable table{"scalar", scalar_gemm_nn, scalar_gemm_nt, scalar_dot_acc64};
  return table;
}

void gemm_nn(int m, int n, int k, const double* a, int lda, const double* b, int ldb, double* c,
             int ldc, bool accumulate) {
  ref_gemm_nn(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}

void gemm_nt(int m, int n, int k, const double* a, int lda, const double* b, int ldb, double* c,
             int ldc, bool accumulate) {
  ref_gemm_nt(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}

}  // namespace asymloc::kernels
