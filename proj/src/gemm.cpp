#include "gaze3d/gemm.hpp"

#include <vector>

#if defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>
#define GAZE3D_GEMM_FMA 1
#endif

namespace gaze3d {

namespace {

// streaming update, four A-rows per pass; also the portable fallback
template <typename T>
void gemm_stream(int m, int n, int k, const T* a, const T* b, T* c) {
  int i = 0;
  for (; i + 4 <= m; i += 4) {
    for (int p = 0; p < k; ++p) {
      const T a0 = a[(i + 0) * k + p], a1 = a[(i + 1) * k + p];
      const T a2 = a[(i + 2) * k + p], a3 = a[(i + 3) * k + p];
      const T* __restrict brow = b + static_cast<std::size_t>(p) * n;
      T* __restrict c0 = c + static_cast<std::size_t>(i + 0) * n;
      T* __restrict c1 = c + static_cast<std::size_t>(i + 1) * n;
      T* __restrict c2 = c + static_cast<std::size_t>(i + 2) * n;
      T* __restrict c3 = c + static_cast<std::size_t>(i + 3) * n;
      for (int j = 0; j < n; ++j) {
        const T bj = brow[j];
        c0[j] += a0 * bj;
        c1[j] += a1 * bj;
        c2[j] += a2 * bj;
        c3[j] += a3 * bj;
      }
    }
  }
  for (; i < m; ++i) {
    for (int p = 0; p < k; ++p) {
      const T ai = a[static_cast<std::size_t>(i) * k + p];
      const T* __restrict brow = b + static_cast<std::size_t>(p) * n;
      T* __restrict crow = c + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += ai * brow[j];
    }
  }
}

#ifdef GAZE3D_GEMM_FMA

// Register-resident 4x32 kernel over a packed B panel. Accumulation over p
// runs in index order for every output element, so the result matches the
// streaming kernel bit for bit when both contract to FMA.
void gemm_packed_fma(int m, int n, int k, const float* a, const float* b, float* c) {
  constexpr int kPanel = 32;
  static thread_local std::vector<float> packed;
  packed.resize(static_cast<std::size_t>(k) * kPanel);

  for (int jc = 0; jc < n; jc += kPanel) {
    const int jl = (n - jc) < kPanel ? (n - jc) : kPanel;
    for (int p = 0; p < k; ++p) {
      const float* src = b + static_cast<std::size_t>(p) * n + jc;
      float* dst = packed.data() + static_cast<std::size_t>(p) * kPanel;
      int v = 0;
      for (; v < jl; ++v) dst[v] = src[v];
      for (; v < kPanel; ++v) dst[v] = 0.f;
    }

    int i = 0;
    for (; i + 4 <= m; i += 4) {
      __m256 acc[4][4];
      for (int r = 0; r < 4; ++r)
        for (int v = 0; v < 4; ++v) acc[r][v] = _mm256_setzero_ps();
      const float* arow[4] = {a + static_cast<std::size_t>(i + 0) * k,
                              a + static_cast<std::size_t>(i + 1) * k,
                              a + static_cast<std::size_t>(i + 2) * k,
                              a + static_cast<std::size_t>(i + 3) * k};
      const float* bp = packed.data();
      for (int p = 0; p < k; ++p, bp += kPanel) {
        const __m256 b0 = _mm256_loadu_ps(bp);
        const __m256 b1 = _mm256_loadu_ps(bp + 8);
        const __m256 b2 = _mm256_loadu_ps(bp + 16);
        const __m256 b3 = _mm256_loadu_ps(bp + 24);
        for (int r = 0; r < 4; ++r) {
          const __m256 av = _mm256_set1_ps(arow[r][p]);
          acc[r][0] = _mm256_fmadd_ps(av, b0, acc[r][0]);
          acc[r][1] = _mm256_fmadd_ps(av, b1, acc[r][1]);
          acc[r][2] = _mm256_fmadd_ps(av, b2, acc[r][2]);
          acc[r][3] = _mm256_fmadd_ps(av, b3, acc[r][3]);
        }
      }
      for (int r = 0; r < 4; ++r) {
        float* crow = c + static_cast<std::size_t>(i + r) * n + jc;
        alignas(32) float tmp[kPanel];
        for (int v = 0; v < 4; ++v) _mm256_store_ps(tmp + 8 * v, acc[r][v]);
        for (int v = 0; v < jl; ++v) crow[v] += tmp[v];
      }
    }
    for (; i < m; ++i) {
      __m256 acc0 = _mm256_setzero_ps(), acc1 = _mm256_setzero_ps();
      __m256 acc2 = _mm256_setzero_ps(), acc3 = _mm256_setzero_ps();
      const float* arow = a + static_cast<std::size_t>(i) * k;
      const float* bp = packed.data();
      for (int p = 0; p < k; ++p, bp += kPanel) {
        const __m256 av = _mm256_set1_ps(arow[p]);
        acc0 = _mm256_fmadd_ps(av, _mm256_loadu_ps(bp), acc0);
        acc1 = _mm256_fmadd_ps(av, _mm256_loadu_ps(bp + 8), acc1);
        acc2 = _mm256_fmadd_ps(av, _mm256_loadu_ps(bp + 16), acc2);
        acc3 = _mm256_fmadd_ps(av, _mm256_loadu_ps(bp + 24), acc3);
      }
      alignas(32) float tmp[kPanel];
      _mm256_store_ps(tmp, acc0);
      _mm256_store_ps(tmp + 8, acc1);
      _mm256_store_ps(tmp + 16, acc2);
      _mm256_store_ps(tmp + 24, acc3);
      float* crow = c + static_cast<std::size_t>(i) * n + jc;
      for (int v = 0; v < jl; ++v) crow[v] += tmp[v];
    }
  }
}

#endif  // GAZE3D_GEMM_FMA

}  // namespace

void gemm_accumulate(int m, int n, int k, const float* a, const float* b, float* c) {
  if (m <= 0 || n <= 0 || k <= 0) return;
#ifdef GAZE3D_GEMM_FMA
  // packing pays off once the panel is reused across a few rows and the
  // k loop is long enough to amortize the setup
  if (m >= 4 && k >= 8 && n >= 8) {
    gemm_packed_fma(m, n, k, a, b, c);
    return;
  }
#endif
  gemm_stream(m, n, k, a, b, c);
}

void gemm_accumulate(int m, int n, int k, const double* a, const double* b, double* c) {
  if (m <= 0 || n <= 0 || k <= 0) return;
  gemm_stream(m, n, k, a, b, c);
}

}  // namespace gaze3d
