#pragma once

#include <string>
#include <utility>
#include <vector>

#include "sac/rng.hpp"
#include "sac/tensor.hpp"

namespace sac {

// Named parameter store. Registration order is the optimizer walk order and
// the checkpoint order, both deterministic by construction.
struct ParamRegistry {
  std::vector<std::pair<std::string, Tensor>> items;

  Tensor add(const std::string& name, Tensor t) {
    for (auto& [n, _] : items)
      if (n == name) throw ContractError("duplicate parameter name: " + name);
    t.impl()->requires_grad = true;
    items.emplace_back(name, t);
    return t;
  }

  const Tensor* find(const std::string& name) const {
    for (auto& [n, t] : items)
      if (n == name) return &t;
    return nullptr;
  }

  Dim total_params() const {
    Dim n = 0;
    for (auto& [_, t] : items) n += t.numel();
    return n;
  }

  void zero_grad() {
    for (auto& [_, t] : items) t.zero_grad();
  }
};

enum class Init { HeNormal, Zero };

inline Tensor init_weight(Shape shape, Dim fan_in, Init init, Rng& rng) {
  if (init == Init::Zero) return Tensor::zeros(std::move(shape));
  double stdev = std::sqrt(2.0 / static_cast<double>(fan_in));
  return Tensor::randn(std::move(shape), rng, stdev);
}

struct Linear {
  Tensor w, b;

  static Linear make(ParamRegistry& reg, const std::string& prefix, Dim in, Dim out, Rng& rng,
                     Init init = Init::HeNormal, bool bias = true) {
    Linear l;
    l.w = reg.add(prefix + ".weight", init_weight({out, in}, in, init, rng));
    if (bias) l.b = reg.add(prefix + ".bias", Tensor::zeros({out}));
    return l;
  }

  Tensor operator()(const Tensor& x) const { return linear(x, w, b); }
};

struct Conv {
  Tensor w;
  int stride = 1, pad = 0, groups = 1;

  static Conv make(ParamRegistry& reg, const std::string& prefix, Dim in, Dim out, int kernel,
                   int stride, int pad, int groups, Rng& rng, Init init = Init::HeNormal) {
    Conv c;
    c.stride = stride;
    c.pad = pad;
    c.groups = groups;
    Dim fan_in = (in / groups) * kernel * kernel;
    c.w = reg.add(prefix + ".weight",
                  init_weight({out, in / groups, kernel, kernel}, fan_in, init, rng));
    return c;
  }

  Tensor operator()(const Tensor& x) const { return conv2d(x, w, stride, pad, groups); }
};

// Channel layernorm with learned gain/bias; the axis is supplied per call
// because feature maps carry channels at axis 1 (4-d) or 2 (5-d).
struct Norm {
  Tensor gain, bias;

  static Norm make(ParamRegistry& reg, const std::string& prefix, Dim channels) {
    Norm n;
    n.gain = reg.add(prefix + ".weight", Tensor::full({channels}, 1.0f));
    n.bias = reg.add(prefix + ".bias", Tensor::zeros({channels}));
    return n;
  }

  Tensor operator()(const Tensor& x, int axis) const { return layernorm(x, axis, gain, bias); }
};

}  // namespace sac
