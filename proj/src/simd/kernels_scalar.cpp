#include "proxops/simd/kernels.hpp"

namespace proxops::simd::scalar {

void gemm_nn(int m, int n, int k, const double* a, int lda, const double* b, int ldb, double beta,
             double* c, int ldc) {
  for (int i = 0; i < m; ++i) {
    double* ci = c + static_cast<long>(i) * ldc;
    if (beta == 0.0) {
      for (int j = 0; j < n; ++j) ci[j] = 0.0;
    } else if (beta != 1.0) {
      for (int j = 0; j < n; ++j) ci[j] *= beta;
    }
    const double* ai = a + static_cast<long>(i) * lda;
    for (int p = 0; p < k; ++p) {
      const double aip = ai[p];
      const double* bp = b + static_cast<long>(p) * ldb;
      for (int j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

void gemm_tn(int m, int n, int k, const double* a, int lda, const double* b, int ldb, double* c,
             int ldc) {
  for (int p = 0; p < k; ++p) {
    const double* ap = a + static_cast<long>(p) * lda;
    const double* bp = b + static_cast<long>(p) * ldb;
    for (int i = 0; i < m; ++i) {
      const double api = ap[i];
      if (api == 0.0) continue;  // ReLU-masked activations are often exactly zero
      double* ci = c + static_cast<long>(i) * ldc;
      for (int j = 0; j < n; ++j) ci[j] += api * bp[j];
    }
  }
}

void gemm_nt(int m, int n, int k, const double* a, int lda, const double* b, int ldb, double* c,
             int ldc) {
  for (int i = 0; i < m; ++i) {
    const double* ai = a + static_cast<long>(i) * lda;
    for (int j = 0; j < n; ++j) {
      const double* bj = b + static_cast<long>(j) * ldb;
      double acc = 0.0;
      for (int p = 0; p < k; ++p) acc += ai[p] * bj[p];
      c[static_cast<long>(i) * ldc + j] = acc;
    }
  }
}

}  // namespace proxops::simd::scalar
