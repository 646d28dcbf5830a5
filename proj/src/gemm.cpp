#include "gemm.hpp"

// Compiled with -ffp-contract=fast (see CMakeLists): FMA is fine here because
// GEMM outputs are only ever checked against tolerance-based oracles.

namespace sac::detail {

void gemm_nn(const float* a, const float* b, float* c, Dim m, Dim k, Dim n) {
  for (Dim i = 0; i < m; ++i) {
    const float* ai = a + i * k;
    float* ci = c + i * n;
    for (Dim l = 0; l < k; ++l) {
      float v = ai[l];
      // Spike-form operands make this matter: binary activations give long
      // zero runs, and zero-initialized projections are all-zero rows.
      if (v == 0.0f) continue;
      const float* bl = b + l * n;
      for (Dim j = 0; j < n; ++j) ci[j] += v * bl[j];
    }
  }
}

void gemm_nt(const float* a, const float* b, float* c, Dim m, Dim k, Dim n) {
  constexpr Dim kLanes = 16;
  for (Dim i = 0; i < m; ++i) {
    const float* ai = a + i * k;
    float* ci = c + i * n;
    for (Dim j = 0; j < n; ++j) {
      const float* bj = b + j * k;
      float acc[kLanes] = {};
      Dim l = 0;
      for (; l + kLanes <= k; l += kLanes)
        for (Dim u = 0; u < kLanes; ++u) acc[u] += ai[l + u] * bj[l + u];
      float tail = 0.0f;
      for (; l < k; ++l) tail += ai[l] * bj[l];
      for (Dim h = kLanes / 2; h > 0; h /= 2)
        for (Dim u = 0; u < h; ++u) acc[u] += acc[u + h];
      ci[j] += acc[0] + tail;
    }
  }
}

void gemm_tn(const float* a, const float* b, float* c, Dim m, Dim k, Dim n) {
  for (Dim r = 0; r < m; ++r) {
    const float* ar = a + r * k;
    const float* br = b + r * n;
    for (Dim i = 0; i < k; ++i) {
      float v = ar[i];
      if (v == 0.0f) continue;
      float* ci = c + i * n;
      for (Dim j = 0; j < n; ++j) ci[j] += v * br[j];
    }
  }
}

}  // namespace sac::detail
