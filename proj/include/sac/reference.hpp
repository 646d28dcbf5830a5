#pragma once

#include <cstdint>
#include <vector>

#include "sac/common.hpp"
#include "sac/neuron.hpp"

// Naive reference implementations used as verification oracles. Everything
// here is written directly from the operation contracts with plain loops and
// double accumulation; nothing calls into (or is called by) the fast kernels.

namespace sac::ref {

using dvec = std::vector<double>;

dvec matmul(const dvec& a, const Shape& sa, const dvec& b, const Shape& sb, Shape* out_shape);

// x[rows,din] * w[dout,din]^T + b
dvec linear(const dvec& x, Dim rows, Dim din, const dvec& w, Dim dout, const dvec* b);

dvec conv2d(const dvec& x, const Shape& sx, const dvec& w, const Shape& sw, int stride, int pad,
            int groups, Shape* out_shape);

dvec layernorm(const dvec& x, const Shape& sx, int axis, const dvec& gain, const dvec& bias,
               double eps);

dvec global_avg_pool(const dvec& x, const Shape& sx);
dvec mean_axis(const dvec& x, const Shape& sx, int axis);
double sum(const dvec& x);
dvec softmax_lastdim(const dvec& x, Dim rows, Dim cols);
dvec gelu(const dvec& x);

// (1-eps)*CE + eps*mean-over-classes CE, averaged over the batch.
double smoothed_ce(const dvec& logits, Dim n, Dim classes, const std::vector<std::int32_t>& labels,
                   double eps_smooth);

// Independent scalar LIF simulation. Float arithmetic on purpose: the module
// contract fixes the float op order, and equality is asserted bit-for-float.
std::vector<float> lif_sequence(const neuron::LIFParams& p, const std::vector<float>& x,
                                Dim t_steps, Dim n);

// For each output slot of partition(x[N,C,H,W]) -> [N*B, L, C], the flat
// source index in x, derived by direct index enumeration.
std::vector<Dim> partition_index_map(Dim n, Dim c, Dim h, Dim w, bool grid, Dim size);

}  // namespace sac::ref
