#pragma once

#include <string>
#include <utility>
#include <vector>

#include "sac/tensor.hpp"

namespace sac::neuron {

enum class Surrogate { Atan, Sigmoid };

const char* to_string(Surrogate s);
Surrogate surrogate_from_string(const std::string& s);

// Discrete-time LIF neuron, Euler step with dt = 1 over
//   tau dV/dt = -(V - v_rest) + r * I(t).
// Membrane update (float32, exact op order shared with the scalar reference):
//   h  = v + (1/tau) * (-(v - v_rest) + r * x)     with 1/tau precomputed
//   s  = [h >= v_threshold] and not refractory
//   v' = v_reset where s = 1, else h (hard reset)
// Backward substitutes the configured surrogate for d s / d h and detaches
// the reset (no gradient through s into the v' selection).
struct LIFParams {
  float tau = 2.0f;
  float v_threshold = 1.0f;
  float v_reset = 0.0f;
  float v_rest = 0.0f;
  float r = 1.0f;
  Surrogate surrogate = Surrogate::Atan;
  float alpha = 2.0f;
  int refractory_steps = 0;
};

void validate(const LIFParams& p);

// d spike / d membrane at x = h - v_threshold:
//   Atan:    alpha / (2 * (1 + (pi/2 * alpha * x)^2))
//   Sigmoid: alpha * sig(alpha x) * (1 - sig(alpha x))
double surrogate_value(Surrogate kind, double alpha, double x);

struct LIFState {
  Tensor v;                             // membrane potential, input shape
  std::vector<std::int32_t> refractory;  // steps left, per element
};

LIFState initial_state(const LIFParams& p, const Shape& shape);

// One step; spikes are exactly 0 or 1. Throws NumericError on non-finite input.
std::pair<Tensor, LIFState> lif_step(const LIFParams& p, const LIFState& state,
                                     const Tensor& input);

// Folds lif_step over the leading time axis of input_seq [T,...]; state starts
// at v = v_rest with no refractory and is not carried across calls.
Tensor lif_sequence(const LIFParams& p, const Tensor& input_seq);

}  // namespace sac::neuron
