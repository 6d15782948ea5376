#pragma once

// Inner-loop arithmetic for convolution, matmul and descriptor matching.
//
// Every kernel has a portable scalar reference. On x86-64 an AVX2+FMA variant
// is compiled into its own translation unit and selected at runtime when the
// CPU reports support. ASYMLOC_KERNELS=scalar forces the reference path.
// f64 always runs the reference loops (gradient verification path).

#include <cstddef>
#include <string_view>

namespace asymloc::kernels {

// C[M x N] (+)= A[M x K] * B[K x N]. Row-major with explicit leading dims.
using GemmFn = void (*)(int m, int n, int k, const float* a, int lda, const float* b, int ldb,
                        float* c, int ldc, bool accumulate);
// Dot product of float vectors accumulated in double.
using DotAcc64Fn = double (*)(const float* a, const float* b, int n);

struct KernelTable {
  std::string_view name;
  GemmFn gemm_nn;  ///< C (+)= A * B
  GemmFn gemm_nt;  ///< C (+)= A * B^T, B given as N x K
  DotAcc64Fn dot_acc64;
};

const KernelTable& scalar_table();
/// nullptr when the binary was built without the AVX2 unit.
const KernelTable* avx2_table();
bool cpu_supports_avx2();
/// Table chosen once per process.
const KernelTable& active();

// Typed front doors used by the tensor ops.
void gemm_nn(int m, int n, int k, const float* a, int lda, const float* b, int ldb, float* c,
             int ldc, bool accumulate);
void gemm_nn(int m, int n, int k, const double* a, int lda, const double* b, int ldb, double* c,
             int ldc, bool accumulate);
void gemm_nt(int m, int n, int k, const float* a, int lda, const float* b, int ldb, float* c,
             int ldc, bool accumulate);
void gemm_nt(int m, int n, int k, const double* a, int lda, const double* b, int ldb, double* c,
             int ldc, bool accumulate);

}  // namespace asymloc::kernels
