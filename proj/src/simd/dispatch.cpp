#include <atomic>
#include <cstdlib>
#include <cstring>

#include "proxops/simd/kernels.hpp"
#include "proxops/types.hpp"

namespace proxops::simd {

namespace {

bool cpu_has_avx2() {
#if defined(PROXOPS_HAVE_AVX2) && (defined(__x86_64__) || defined(__i386__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Backend detect() {
  const char* env = std::getenv("PROXOPS_SIMD");
  if (env && std::strcmp(env, "scalar") == 0) return Backend::Scalar;
  return cpu_has_avx2() ? Backend::Avx2 : Backend::Scalar;
}

// -1: not yet decided; otherwise a Backend value.
std::atomic<int> g_backend{-1};

}  // namespace

const char* to_string(Backend b) {
  return b == Backend::Avx2 ? "avx2" : "scalar";
}

bool avx2_available() {
  static const bool ok = cpu_has_avx2();
  return ok;
}

Backend active_backend() {
  int v = g_backend.load(std::memory_order_acquire);
  if (v < 0) {
    v = static_cast<int>(detect());
    g_backend.store(v, std::memory_order_release);
  }
  return static_cast<Backend>(v);
}

void force_backend(Backend b) {
  if (b == Backend::Avx2 && !avx2_available()) {
    throw Error(ErrorCode::Config, "AVX2 kernels are not available on this machine");
  }
  g_backend.store(static_cast<int>(b), std::memory_order_release);
}

void reset_backend() { g_backend.store(-1, std::memory_order_release); }

void gemm_nn(int m, int n, int k, const double* a, int lda, const double* b, int ldb, double beta,
             double* c, int ldc) {
#ifdef PROXOPS_HAVE_AVX2
  if (active_backend() == Backend::Avx2) return avx2::gemm_nn(m, n, k, a, lda, b, ldb, beta, c, ldc);
#endif
  scalar::gemm_nn(m, n, k, a, lda, b, ldb, beta, c, ldc);
}

void gemm_tn(int m, int n, int k, const double* a, int lda, const double* b, int ldb, double* c,
             int ldc) {
#ifdef PROXOPS_HAVE_AVX2
  if (active_backend() == Backend::Avx2) return avx2::gemm_tn(m, n, k, a, lda, b, ldb, c, ldc);
#endif
  scalar::gemm_tn(m, n, k, a, lda, b, ldb, c, ldc);
}

void gemm_nt(int m, int n, int k, const double* a, int lda, const double* b, int ldb, double* c,
             int ldc) {
#ifdef PROXOPS_HAVE_AVX2
  if (active_backend() == Backend::Avx2) return avx2::gemm_nt(m, n, k, a, lda, b, ldb, c, ldc);
#endif
  scalar::gemm_nt(m, n, k, a, lda, b, ldb, c, ldc);
}

}  // namespace proxops::simd
