// AVX2 + FMA variants. This translation unit is compiled with -mavx2 -mfma
// and only ever called after cpu_supports_avx2() returned true.

#include "asymloc/kernels.hpp"

#if defined(__AVX2__) && defined(__FMA__)

#include <immintrin.h>

#include <algorithm>
#include <cstring>

namespace asymloc::kernels {

namespace {

constexpr int kBlockK = 128;
constexpr int kBlockN = 256;

inline float hsum(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  __m128 sh = _mm_movehdup_ps(lo);
  __m128 s = _mm_add_ps(lo, sh);
  sh = _mm_movehl_ps(sh, s);
  s = _mm_add_ss(s, sh);
  return _mm_cvtss_f32(s);
}

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d sh = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

// Rows [i, i+R) x cols [j, j+16) of C += A[:, k0:k0+kb] * B[k0:k0+kb, :].
template <int R>
inline void micro_16(int kb, const float* a, int lda, const float* b, int ldb, float* c, int ldc) {
  __m256 acc[R][2];
  for (int r = 0; r < R; ++r) {
    acc[r][0] = _mm256_loadu_ps(c + r * ldc);
    acc[r][1] = _mm256_loadu_ps(c + r * ldc + 8);
  }
  for (int p = 0; p < kb; ++p) {
    const __m256 b0 = _mm256_loadu_ps(b + static_cast<std::ptrdiff_t>(p) * ldb);
    const __m256 b1 = _mm256_loadu_ps(b + static_cast<std::ptrdiff_t>(p) * ldb + 8);
    for (int r = 0; r < R; ++r) {
      const __m256 av = _mm256_broadcast_ss(a + r * lda + p);
      acc[r][0] = _mm256_fmadd_ps(av, b0, acc[r][0]);
      acc[r][1] = _mm256_fmadd_ps(av, b1, acc[r][1]);
    }
  }
  for (int r = 0; r < R; ++r) {
    _mm256_storeu_ps(c + r * ldc, acc[r][0]);
    _mm256_storeu_ps(c + r * ldc + 8, acc[r][1]);
  }
}

template <int R>
inline void micro_8(int kb, const float* a, int lda, const float* b, int ldb, float* c, int ldc) {
  __m256 acc[R];
  for (int r = 0; r < R; ++r) acc[r] = _mm256_loadu_ps(c + r * ldc);
  for (int p = 0; p < kb; ++p) {
    const __m256 b0 = _mm256_loadu_ps(b + static_cast<std::ptrdiff_t>(p) * ldb);
    for (int r = 0; r < R; ++r)
      acc[r] = _mm256_fmadd_ps(_mm256_broadcast_ss(a + r * lda + p), b0, acc[r]);
  }
  for (int r = 0; r < R; ++r) _mm256_storeu_ps(c + r * ldc, acc[r]);
}

template <int R>
inline void micro_tail(int kb, int nb, const float* a, int lda, const float* b, int ldb, float* c,
                       int ldc) {
  for (int r = 0; r < R; ++r)
    for (int p = 0; p < kb; ++p) {
      const float av = a[r * lda + p];
      const float* brow = b + static_cast<std::ptrdiff_t>(p) * ldb;
      for (int j = 0; j < nb; ++j) c[r * ldc + j] += av * brow[j];
    }
}

template <int R>
void row_panel(int kb, int jb0, int jb1, const float* a, int lda, const float* b, int ldb,
               float* c, int ldc) {
  int j = jb0;
  for (; j + 16 <= jb1; j += 16) micro_16<R>(kb, a, lda, b + j, ldb, c + j, ldc);
  for (; j + 8 <= jb1; j += 8) micro_8<R>(kb, a, lda, b + j, ldb, c + j, ldc);
  if (j < jb1) micro_tail<R>(kb, jb1 - j, a, lda, b + j, ldb, c + j, ldc);
}

void avx2_gemm_nn(int m, int n, int k, const float* a, int lda, const float* b, int ldb, float* c,
                  int ldc, bool accumulate) {
  if (!accumulate)
    for (int i = 0; i < m; ++i)
      std::memset(c + static_cast<std::ptrdiff_t>(i) * ldc, 0, sizeof(float) * n);
  for (int k0 = 0; k0 < k; k0 += kBlockK) {
    const int kb = std::min(kBlockK, k - k0);
    for (int j0 = 0; j0 < n; j0 += kBlockN) {
      const int j1 = std::min(j0 + kBlockN, n);
      const float* bblk = b + static_cast<std::ptrdiff_t>(k0) * ldb;
      int i = 0;
      for (; i + 4 <= m; i += 4)
        row_panel<4>(kb, j0, j1, a + static_cast<std::ptrdiff_t>(i) * lda + k0, lda, bblk, ldb,
                     c + static_cast<std::ptrdiff_t>(i) * ldc, ldc);
      for (; i < m; ++i)
        row_panel<1>(kb, j0, j1, a + static_cast<std::ptrdiff_t>(i) * lda + k0, lda, bblk, ldb,
                     c + static_cast<std::ptrdiff_t>(i) * ldc, ldc);
    }
  }
}

// C[i][j] (+)= dot(A row i, B row j). 4 x 2 register block.
void avx2_gemm_nt(int m, int n, int k, const float* a, int lda, const float* b, int ldb, float* c,
                  int ldc, bool accumulate) {
  auto emit = [&](int i, int j, float v) {
    float& out = c[static_cast<std::ptrdiff_t>(i) * ldc + j];
    out = accumulate ? out + v : v;
  };
  const int kv = k & ~7;
  int i = 0;
  for (; i + 4 <= m; i += 4) {
    const float* a0 = a + static_cast<std::ptrdiff_t>(i) * lda;
    int j = 0;
    for (; j + 2 <= n; j += 2) {
      const float* b0 = b + static_cast<std::ptrdiff_t>(j) * ldb;
      const float* b1 = b0 + ldb;
      __m256 acc[4][2];
      for (auto& row : acc) row[0] = row[1] = _mm256_setzero_ps();
      for (int p = 0; p < kv; p += 8) {
        const __m256 vb0 = _mm256_loadu_ps(b0 + p);
        const __m256 vb1 = _mm256_loadu_ps(b1 + p);
        for (int r = 0; r < 4; ++r) {
          const __m256 va = _mm256_loadu_ps(a0 + r * lda + p);
          acc[r][0] = _mm256_fmadd_ps(va, vb0, acc[r][0]);
          acc[r][1] = _mm256_fmadd_ps(va, vb1, acc[r][1]);
        }
      }
      for (int r = 0; r < 4; ++r) {
        float s0 = hsum(acc[r][0]);
        float s1 = hsum(acc[r][1]);
        for (int p = kv; p < k; ++p) {
          s0 += a0[r * lda + p] * b0[p];
          s1 += a0[r * lda + p] * b1[p];
        }
        emit(i + r, j, s0);
        emit(i + r, j + 1, s1);
      }
    }
    for (; j < n; ++j) {
      const float* b0 = b + static_cast<std::ptrdiff_t>(j) * ldb;
      for (int r = 0; r < 4; ++r) {
        __m256 acc = _mm256_setzero_ps();
        for (int p = 0; p < kv; p += 8)
          acc = _mm256_fmadd_ps(_mm256_loadu_ps(a0 + r * lda + p), _mm256_loadu_ps(b0 + p), acc);
        float s = hsum(acc);
        for (int p = kv; p < k; ++p) s += a0[r * lda + p] * b0[p];
        emit(i + r, j, s);
      }
    }
  }
  for (; i < m; ++i) {
    const float* a0 = a + static_cast<std::ptrdiff_t>(i) * lda;
    for (int j = 0; j < n; ++j) {
      const float* b0 = b + static_cast<std::ptrdiff_t>(j) * ldb;
      __m256 acc = _mm256_setzero_ps();
      for (int p = 0; p < kv; p += 8)
        acc = _mm256_fmadd_ps(_mm256_loadu_ps(a0 + p), _mm256_loadu_ps(b0 + p), acc);
      float s = hsum(acc);
      for (int p = kv; p < k; ++p) s += a0[p] * b0[p];
      emit(i, j, s);
    }
  }
}

double avx2_dot_acc64(const float* a, const float* b, int n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  int i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 va = _mm256_loadu_ps(a + i);
    const __m256 vb = _mm256_loadu_ps(b + i);
    acc0 = _mm256_fmadd_pd(_mm256_cvtps_pd(_mm256_castps256_ps128(va)),
                           _mm256_cvtps_pd(_mm256_castps256_ps128(vb)), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_cvtps_pd(_mm256_extractf128_ps(va, 1)),
                           _mm256_cvtps_pd(_mm256_extractf128_ps(vb, 1)), acc1);
  }
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return s;
}

}  // namespace

const KernelTable* avx2_table_impl() {
  static const KernelTable table{"avx2", avx2_gemm_nn, avx2_gemm_nt, avx2_dot_acc64};
  return &table;
}

}  // namespace asymloc::kernels

#else

namespace asymloc::kernels {
const KernelTable* avx2_table_impl() { return nullptr; }
}  // namespace asymloc::kernels

#endif
