#pragma once

#include "sac/common.hpp"

namespace sac::detail {

// Accumulating single-thread GEMM kernels. Each output element is reduced in
// a fixed sequential order, so results are bit-reproducible for a given
// binary regardless of input sparsity or caller batching.

// c[m,n] += a[m,k] * b[k,n]
void gemm_nn(const float* a, const float* b, float* c, Dim m, Dim k, Dim n);

// c[m,n] += a[m,k] * b[n,k]^T
void gemm_nt(const float* a, const float* b, float* c, Dim m, Dim k, Dim n);

// c[k,n] += a[m,k]^T * b[m,n]
void gemm_tn(const float* a, const float* b, float* c, Dim m, Dim k, Dim n);

}  // namespace sac::detail
