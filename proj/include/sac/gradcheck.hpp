#pragma once

#include <functional>
#include <string>
#include <vector>

#include "sac/reference.hpp"
#include "sac/tensor.hpp"

namespace sac::gradcheck {

struct OpCheck {
  std::string name;
  double max_val_diff = 0.0;   // implementation forward vs reference forward
  double max_grad_diff = 0.0;  // analytic gradient vs central differences
  double tol = 0.0;
  bool pass = false;
};

using ImplFn = std::function<Tensor(const std::vector<Tensor>&)>;
using RefFn = std::function<ref::dvec(const std::vector<ref::dvec>&)>;

// Draws N(0,1) inputs, runs the implementation under a tape and the double
// reference side by side, then compares every input coordinate's analytic
// gradient against central differences of the reference (loss = sum(out * W)
// for a fixed random W, evaluated in double).
OpCheck check_op(const std::string& name, const ImplFn& impl, const RefFn& ref_fn,
                 const std::vector<Shape>& input_shapes, Rng& rng, double eps = 1e-3,
                 double tol = 1e-4);

// Central-difference gradient of a float evaluation at one coordinate.
double fd_coordinate(const std::function<double()>& loss, float* coord, double eps);

// Finite-difference suites. Scope names follow the CLI: op covers every
// differentiable tensor op against the double references (abs tol 1e-4);
// block covers the ConvNeXt block (smooth path, tol 1e-3); model spot-checks
// full-model parameter gradients in spike-free mode (rel tol 1e-2, >=5
// coordinates per parameter tensor).
std::vector<OpCheck> op_suite(std::uint64_t seed);
std::vector<OpCheck> block_suite(std::uint64_t seed);
std::vector<OpCheck> model_suite(std::uint64_t seed);

}  // namespace sac::gradcheck
