// Compiled with -mavx2 -mfma; only reached through the runtime dispatcher.
#include <immintrin.h>

#include <vector>

#include "proxops/simd/kernels.hpp"

namespace proxops::simd::avx2 {

namespace {

// C[i][j] (+)= sum_p A(i, p) * B[p][j] with A(i, p) = a[i * si + p * sp]. Register tile of R rows
// by 8 columns; beta is applied to C once the tile is accumulated.
template <int R>
inline void tile8(int k, const double* a, long si, long sp, const double* b, int ldb, double beta,
                  double* c, int ldc) {
  __m256d acc0[R], acc1[R];
  for (int r = 0; r < R; ++r) {
    acc0[r] = _mm256_setzero_pd();
    acc1[r] = _mm256_setzero_pd();
  }
  for (int p = 0; p < k; ++p) {
    const double* bp = b + static_cast<long>(p) * ldb;
    const __m256d b0 = _mm256_loadu_pd(bp);
    const __m256d b1 = _mm256_loadu_pd(bp + 4);
    for (int r = 0; r < R; ++r) {
      const __m256d av = _mm256_broadcast_sd(a + r * si + p * sp);
      acc0[r] = _mm256_fmadd_pd(av, b0, acc0[r]);
      acc1[r] = _mm256_fmadd_pd(av, b1, acc1[r]);
    }
  }
  for (int r = 0; r < R; ++r) {
    double* cr = c + static_cast<long>(r) * ldc;
    if (beta == 0.0) {
      _mm256_storeu_pd(cr, acc0[r]);
      _mm256_storeu_pd(cr + 4, acc1[r]);
    } else {
      const __m256d bv = _mm256_set1_pd(beta);
      _mm256_storeu_pd(cr, _mm256_fmadd_pd(bv, _mm256_loadu_pd(cr), acc0[r]));
      _mm256_storeu_pd(cr + 4, _mm256_fmadd_pd(bv, _mm256_loadu_pd(cr + 4), acc1[r]));
    }
  }
}

template <int R>
inline void tile4(int k, const double* a, long si, long sp, const double* b, int ldb, double beta,
                  double* c, int ldc) {
  __m256d acc[R];
  for (int r = 0; r < R; ++r) acc[r] = _mm256_setzero_pd();
  for (int p = 0; p < k; ++p) {
    const __m256d b0 = _mm256_loadu_pd(b + static_cast<long>(p) * ldb);
    for (int r = 0; r < R; ++r) {
      acc[r] = _mm256_fmadd_pd(_mm256_broadcast_sd(a + r * si + p * sp), b0, acc[r]);
    }
  }
  for (int r = 0; r < R; ++r) {
    double* cr = c + static_cast<long>(r) * ldc;
    if (beta == 0.0) {
      _mm256_storeu_pd(cr, acc[r]);
    } else {
      _mm256_storeu_pd(cr, _mm256_fmadd_pd(_mm256_set1_pd(beta), _mm256_loadu_pd(cr), acc[r]));
    }
  }
}

template <int R>
inline void tile1(int k, const double* a, long si, long sp, const double* b, int ldb, double beta,
                  double* c, int ldc) {
  for (int r = 0; r < R; ++r) {
    double acc = 0.0;
    for (int p = 0; p < k; ++p) acc += a[r * si + p * sp] * b[static_cast<long>(p) * ldb];
    double* cr = c + static_cast<long>(r) * ldc;
    *cr = (beta == 0.0) ? acc : beta * *cr + acc;
  }
}

template <int R>
inline void row_block(int n, int k, const double* a, long si, long sp, const double* b, int ldb,
                      double beta, double* c, int ldc) {
  int j = 0;
  for (; j + 8 <= n; j += 8) tile8<R>(k, a, si, sp, b + j, ldb, beta, c + j, ldc);
  for (; j + 4 <= n; j += 4) tile4<R>(k, a, si, sp, b + j, ldb, beta, c + j, ldc);
  for (; j < n; ++j) tile1<R>(k, a, si, sp, b + j, ldb, beta, c + j, ldc);
}

void gemm_strided(int m, int n, int k, const double* a, long si, long sp, const double* b, int ldb,
                  double beta, double* c, int ldc) {
  int i = 0;
  for (; i + 4 <= m; i += 4) {
    row_block<4>(n, k, a + i * si, si, sp, b, ldb, beta, c + static_cast<long>(i) * ldc, ldc);
  }
  for (; i < m; ++i) {
    row_block<1>(n, k, a + i * si, si, sp, b, ldb, beta, c + static_cast<long>(i) * ldc, ldc);
  }
}

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

// Dot products of R rows of A against C columns of B (rows of B in memory).
template <int R, int C>
inline void dot_tile(int k, const double* a, int lda, const double* b, int ldb, double* c,
                     int ldc) {
  __m256d acc[R][C];
  for (int r = 0; r < R; ++r)
    for (int q = 0; q < C; ++q) acc[r][q] = _mm256_setzero_pd();
  int p = 0;
  for (; p + 4 <= k; p += 4) {
    __m256d bv[C];
    for (int q = 0; q < C; ++q) bv[q] = _mm256_loadu_pd(b + static_cast<long>(q) * ldb + p);
    for (int r = 0; r < R; ++r) {
      const __m256d av = _mm256_loadu_pd(a + static_cast<long>(r) * lda + p);
      for (int q = 0; q < C; ++q) acc[r][q] = _mm256_fmadd_pd(av, bv[q], acc[r][q]);
    }
  }
  for (int r = 0; r < R; ++r) {
    for (int q = 0; q < C; ++q) {
      double s = hsum(acc[r][q]);
      for (int t = p; t < k; ++t) s += a[static_cast<long>(r) * lda + t] * b[static_cast<long>(q) * ldb + t];
      c[static_cast<long>(r) * ldc + q] = s;
    }
  }
}

}  // namespace

void gemm_nn(int m, int n, int k, const double* a, int lda, const double* b, int ldb, double beta,
             double* c, int ldc) {
  gemm_strided(m, n, k, a, lda, 1, b, ldb, beta, c, ldc);
}

void gemm_tn(int m, int n, int k, const double* a, int lda, const double* b, int ldb, double* c,
             int ldc) {
  gemm_strided(m, n, k, a, 1, lda, b, ldb, 1.0, c, ldc);
}

void gemm_nt(int m, int n, int k, const double* a, int lda, const double* b, int ldb, double* c,
             int ldc) {
  // Large products: transpose B once (n k copies against m n k multiply-adds) and reuse the
  // row-broadcast kernel, which streams contiguous rows of B instead of reducing dot products.
  if (m >= 8 && n >= 8) {
    thread_local std::vector<double> bt;
    bt.resize(static_cast<std::size_t>(k) * n);
    for (int j = 0; j < n; ++j) {
      const double* bj = b + static_cast<long>(j) * ldb;
      for (int p = 0; p < k; ++p) bt[static_cast<std::size_t>(p) * n + j] = bj[p];
    }
    gemm_strided(m, n, k, a, lda, 1, bt.data(), n, 0.0, c, ldc);
    return;
  }
  int i = 0;
  for (; i + 2 <= m; i += 2) {
    const double* ai = a + static_cast<long>(i) * lda;
    double* ci = c + static_cast<long>(i) * ldc;
    int j = 0;
    for (; j + 4 <= n; j += 4) dot_tile<2, 4>(k, ai, lda, b + static_cast<long>(j) * ldb, ldb, ci + j, ldc);
    for (; j < n; ++j) dot_tile<2, 1>(k, ai, lda, b + static_cast<long>(j) * ldb, ldb, ci + j, ldc);
  }
  for (; i < m; ++i) {
    const double* ai = a + static_cast<long>(i) * lda;
    double* ci = c + static_cast<long>(i) * ldc;
    int j = 0;
    for (; j + 4 <= n; j += 4) dot_tile<1, 4>(k, ai, lda, b + static_cast<long>(j) * ldb, ldb, ci + j, ldc);
    for (; j < n; ++j) dot_tile<1, 1>(k, ai, lda, b + static_cast<long>(j) * ldb, ldb, ci + j, ldc);
  }
}

}  // namespace proxops::simd::avx2
