#pragma once

// Dense row-major double-precision GEMM kernels used by the policy network.
//
// Three shapes cover the forward and backward passes of a dense layer whose weights are
// stored input-major (W[in][out]):
//   gemm_nn:  C[m x n] = beta * C + A[m x k] * B[k x n]       (forward)
//   gemm_tn:  C[m x n] += A[k x m]^T * B[k x n]               (weight gradient)
//   gemm_nt:  C[m x n] = A[m x k] * B[n x k]^T                (input gradient)
// All matrices are row-major with explicit leading dimensions.
//
// A scalar reference implementation is always available; an AVX2/FMA variant is selected at
// runtime when the CPU supports it. Setting PROXOPS_SIMD=scalar in the environment forces the
// reference path. The two backends agree to rounding but are not bit-identical, because the
// vector path fuses multiply-adds.

namespace proxops::simd {

enum class Backend { Scalar, Avx2 };

const char* to_string(Backend b);

/// True when the AVX2 kernels were compiled in and the CPU supports AVX2 and FMA.
bool avx2_available();

/// Backend used by the dispatching entry points below.
Backend active_backend();

/// Test hook: overrides the dispatch decision. Throws Error(Config) if the backend is unavailable.
void force_backend(Backend b);

/// Restores the automatic choice (environment override, then CPU detection).
void reset_backend();

void gemm_nn(int m, int n, int k, const double* a, int lda, const double* b, int ldb, double beta,
             double* c, int ldc);
void gemm_tn(int m, int n, int k, const double* a, int lda, const double* b, int ldb, double* c,
             int ldc);
void gemm_nt(int m, int n, int k, const double* a, int lda, const double* b, int ldb, double* c,
             int ldc);

namespace scalar {
void gemm_nn(int m, int n, int k, const double* a, int lda, const double* b, int ldb, double beta,
             double* c, int ldc);
void gemm_tn(int m, int n, int k, const double* a, int lda, const double* b, int ldb, double* c,
             int ldc);
void gemm_nt(int m, int n, int k, const double* a, int lda, const double* b, int ldb, double* c,
             int ldc);
}  // namespace scalar

namespace avx2 {
// Only callable when avx2_available() is true.
void gemm_nn(int m, int n, int k, const double* a, int lda, const double* b, int ldb, double beta,
             double* c, int ldc);
void gemm_tn(int m, int n, int k, const double* a, int lda, const double* b, int ldb, double* c,
             int ldc);
void gemm_nt(int m, int n, int k, const double* a, int lda, const double* b, int ldb, double* c,
             int ldc);
}  // namespace avx2

}  // namespace proxops::simd
