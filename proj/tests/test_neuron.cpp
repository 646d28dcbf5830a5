#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "sac/neuron.hpp"
#include "sac/reference.hpp"
#include "testutil.hpp"

using namespace sac;
using namespace sac::neuron;
using sactest::bits_equal;

namespace {

LIFParams default_params() {
  LIFParams p;
  p.tau = 2.0f;
  p.v_threshold = 1.0f;
  return p;
}

double count_spikes(const Tensor& s) {
  double n = 0;
  for (float v : s.values()) n += v;
  return n;
}

}  // namespace

TEST_CASE("surrogate closed forms at zero") {
  CHECK(surrogate_value(Surrogate::Atan, 2.0, 0.0) == 1.0);      // alpha/2
  CHECK(surrogate_value(Surrogate::Sigmoid, 4.0, 0.0) == 1.0);   // alpha/4
}

TEST_CASE("surrogate formulas across a sweep") {
  constexpr double kPiHalf = 1.5707963267948966;
  for (double alpha : {0.5, 1.0, 2.0, 4.0}) {
    for (double x = -10.0; x <= 10.0; x += 0.37) {
      double t = kPiHalf * alpha * x;
      double want_atan = alpha / (2.0 * (1.0 + t * t));
      CHECK(std::abs(surrogate_value(Surrogate::Atan, alpha, x) - want_atan) < 1e-12);
      double sig = 1.0 / (1.0 + std::exp(-alpha * x));
      double want_sig = alpha * sig * (1.0 - sig);
      CHECK(std::abs(surrogate_value(Surrogate::Sigmoid, alpha, x) - want_sig) < 1e-12);
    }
  }
}

TEST_CASE("surrogates peak at zero and are symmetric") {
  for (auto kind : {Surrogate::Atan, Surrogate::Sigmoid}) {
    for (double alpha : {1.0, 2.0, 5.0}) {
      double at0 = surrogate_value(kind, alpha, 0.0);
      double tail = surrogate_value(kind, alpha, 10.0 / alpha);
      CHECK(tail < at0);
      CHECK(surrogate_value(kind, alpha, 3.1) ==
            doctest::Approx(surrogate_value(kind, alpha, -3.1)).epsilon(1e-12));
    }
  }
}

TEST_CASE("zero input at rest never spikes") {
  LIFParams p = default_params();
  Tensor x = Tensor::zeros({8, 3, 5});
  Tensor s = lif_sequence(p, x);
  CHECK(count_spikes(s) == 0.0);
  // single steps hold the membrane at v_rest
  LIFState st = initial_state(p, {3, 5});
  for (int t = 0; t < 4; ++t) {
    auto [spikes, next] = lif_step(p, st, Tensor::zeros({3, 5}));
    CHECK(count_spikes(spikes) == 0.0);
    for (float v : next.v.values()) CHECK(v == p.v_rest);
    st = std::move(next);
  }
}

TEST_CASE("hand simulation: tau=2, constant drive 2 spikes every step") {
  // h1 = 0 + (1/2)(-0 + 2) = 1.0 >= threshold, reset to 0, then periodic
  LIFParams p = default_params();
  Tensor x = Tensor::full({6, 1}, 2.0f);
  Tensor s = lif_sequence(p, x);
  for (float v : s.values()) CHECK(v == 1.0f);
}

TEST_CASE("spike outputs are binary") {
  Rng rng(31);
  LIFParams p = default_params();
  Tensor x = Tensor::randn({4, 50}, rng, 2.0);
  Tensor s = lif_sequence(p, x);
  for (float v : s.values()) CHECK((v == 0.0f || v == 1.0f));
}

TEST_CASE("spike count is monotonically non-increasing in threshold") {
  Rng rng(32);
  Tensor x = Tensor::randn({8, 100}, rng, 2.0);
  double prev = 1e9;
  for (float th : {0.2f, 1.0f, 2.0f, 4.0f}) {
    LIFParams p = default_params();
    p.v_threshold = th;
    double n = count_spikes(lif_sequence(p, x));
    CHECK(n <= prev);
    prev = n;
  }
}

TEST_CASE("membrane equals v_reset immediately after a spike") {
  Rng rng(33);
  LIFParams p = default_params();
  p.v_reset = 0.25f;
  p.v_threshold = 0.9f;
  LIFState st = initial_state(p, {64});
  for (int t = 0; t < 6; ++t) {
    Tensor x = Tensor::randn({64}, rng, 3.0);
    auto [spikes, next] = lif_step(p, st, x);
    auto sv = spikes.values();
    auto vv = next.v.values();
    for (size_t i = 0; i < sv.size(); ++i)
      if (sv[i] == 1.0f) CHECK(vv[i] == p.v_reset);
    st = std::move(next);
  }
}

TEST_CASE("lif_sequence matches the scalar reference bit-for-float") {
  Rng rng(34);
  for (float tau : {1.5f, 2.0f, 4.0f}) {
    for (float th : {0.2f, 1.0f, 2.0f, 4.0f}) {
      for (Dim t_steps : {1, 2, 4, 8}) {
        LIFParams p = default_params();
        p.tau = tau;
        p.v_threshold = th;
        Dim n = 40;
        Tensor x = Tensor::randn({t_steps, n}, rng, 2.5);
        Tensor s = lif_sequence(p, x);
        std::vector<float> xs(x.values().begin(), x.values().end());
        std::vector<float> want = ref::lif_sequence(p, xs, t_steps, n);
        CHECK(bits_equal(s.values(), std::span<const float>(want)));
      }
    }
  }
}

TEST_CASE("T=1 reduces to a single lif_step") {
  Rng rng(35);
  LIFParams p = default_params();
  Tensor x = Tensor::randn({12}, rng, 2.0);
  Tensor x_seq = reshape(x, {1, 12});
  Tensor s_seq = lif_sequence(p, x_seq);
  auto [s_step, next] = lif_step(p, initial_state(p, {12}), x);
  CHECK(bits_equal(s_seq.values(), s_step.values()));
}

TEST_CASE("lif_sequence equals folding lif_step, values and input grads") {
  Rng rng(36);
  LIFParams p = default_params();
  p.tau = 1.5f;
  const Dim t_steps = 5, n = 17;
  Tensor x = Tensor::randn({t_steps, n}, rng, 2.0, true);

  Tape tape1;
  Tensor s1;
  {
    Tape::Scope scope(&tape1);
    s1 = lif_sequence(p, x);
    tape1.backward(sum_all(s1));
  }
  std::vector<float> g1 = x.grad();

  Tensor x2 = Tensor::from(x.shape(), std::vector<float>(x.values().begin(), x.values().end()),
                           true);
  Tape tape2;
  std::vector<Tensor> step_spikes;
  {
    Tape::Scope scope(&tape2);
    auto steps = split(x2, 0, std::vector<Dim>(t_steps, 1));
    LIFState st = initial_state(p, {1, n});
    std::vector<Tensor> outs;
    for (Dim t = 0; t < t_steps; ++t) {
      auto [sp, next] = lif_step(p, st, steps[static_cast<size_t>(t)]);
      outs.push_back(sp);
      st = std::move(next);
    }
    Tensor s2 = concat(outs, 0);
    CHECK(bits_equal(s1.values(), s2.values()));
    tape2.backward(sum_all(s2));
  }
  CHECK(bits_equal(std::span<const float>(g1), std::span<const float>(x2.grad())));
}

TEST_CASE("backward through the spike equals the surrogate closed form") {
  // tau=1, r=1, v_rest=0 makes h == x exactly, so d spike / d x must equal
  // surrogate_value(kind, alpha, x - v_threshold).
  for (auto kind : {Surrogate::Atan, Surrogate::Sigmoid}) {
    LIFParams p;
    p.tau = 1.0f;
    p.v_threshold = 1.0f;
    p.surrogate = kind;
    p.alpha = 2.0f;
    std::vector<float> xs;
    for (float v = -3.0f; v <= 3.0f; v += 0.1f) xs.push_back(v);
    Tensor x = Tensor::from({1, static_cast<Dim>(xs.size())}, std::vector<float>(xs), true);
    Tape tape;
    {
      Tape::Scope scope(&tape);
      tape.backward(sum_all(lif_sequence(p, x)));
    }
    for (size_t i = 0; i < xs.size(); ++i) {
      float want = static_cast<float>(
          surrogate_value(kind, p.alpha, static_cast<double>(xs[i]) - 1.0));
      CHECK(x.grad()[i] == doctest::Approx(want).epsilon(1e-6));
    }
  }
}

TEST_CASE("BPTT gradient matches an independent chain-rule computation") {
  // Small double-precision BPTT written straight from the update equations:
  //   h_t = v_{t-1}(1 - 1/tau) + (v_rest + r x_t)/tau
  //   s_t = step(h_t - th),  v_t = s_t v_reset + (1 - s_t) h_t  (reset detached)
  Rng rng(37);
  LIFParams p;
  p.tau = 2.0f;
  p.v_threshold = 0.8f;
  p.v_reset = 0.1f;
  p.v_rest = 0.05f;
  p.r = 1.3f;
  p.alpha = 2.0f;
  const Dim t_steps = 6, n = 9;
  Tensor x = Tensor::randn({t_steps, n}, rng, 1.5, true);
  Tape tape;
  Tensor s;
  {
    Tape::Scope scope(&tape);
    s = lif_sequence(p, x);
    tape.backward(sum_all(s));
  }

  const float* xv = x.data();
  const float* sv = s.data();
  for (Dim e = 0; e < n; ++e) {
    // forward in double to recover h_t
    std::vector<double> h(static_cast<size_t>(t_steps));
    double v = p.v_rest;
    for (Dim t = 0; t < t_steps; ++t) {
      h[static_cast<size_t>(t)] =
          v + (1.0 / p.tau) * (-(v - p.v_rest) + p.r * xv[t * n + e]);
      v = sv[t * n + e] == 1.0f ? p.v_reset : h[static_cast<size_t>(t)];
    }
    double dv = 0.0;
    std::vector<double> dx(static_cast<size_t>(t_steps));
    for (Dim t = t_steps - 1; t >= 0; --t) {
      double surr = surrogate_value(p.surrogate, p.alpha,
                                    h[static_cast<size_t>(t)] - p.v_threshold);
      double dh = surr + dv * (1.0 - sv[t * n + e]);
      dx[static_cast<size_t>(t)] = dh * p.r / p.tau;
      dv = dh * (1.0 - 1.0 / p.tau);
    }
    for (Dim t = 0; t < t_steps; ++t)
      CHECK(x.grad()[static_cast<size_t>(t * n + e)] ==
            doctest::Approx(dx[static_cast<size_t>(t)]).epsilon(1e-4));
  }
}

TEST_CASE("refractory period suppresses spikes and the surrogate path") {
  LIFParams p = default_params();
  p.tau = 1.0f;
  p.refractory_steps = 1;
  // constant strong drive: spike, one silent step, spike, ...
  Tensor x = Tensor::full({6, 1}, 5.0f, true);
  Tape tape;
  Tensor s;
  {
    Tape::Scope scope(&tape);
    s = lif_sequence(p, x);
    tape.backward(sum_all(s));
  }
  auto sv = s.values();
  for (Dim t = 0; t < 6; ++t) CHECK(sv[static_cast<size_t>(t)] == (t % 2 == 0 ? 1.0f : 0.0f));
  // grads at suppressed steps have no surrogate contribution; with tau=1 the
  // carry factor (1 - 1/tau) is zero, so they are exactly zero
  for (Dim t = 1; t < 6; t += 2) CHECK(x.grad()[static_cast<size_t>(t)] == 0.0f);
}

TEST_CASE("contract and numeric errors") {
  LIFParams p = default_params();
  CHECK_THROWS_AS(lif_sequence(p, Tensor::zeros({0, 4})), ContractError);
  LIFState st = initial_state(p, {3});
  CHECK_THROWS_AS(lif_step(p, st, Tensor::zeros({4})), ShapeError);
  Tensor bad = Tensor::from({1, 2}, {1.0f, std::nanf("")});
  CHECK_THROWS_AS(lif_sequence(p, bad), NumericError);
  LIFParams badp = default_params();
  badp.tau = 0.0f;
  CHECK_THROWS_AS(lif_sequence(badp, Tensor::zeros({1, 2})), ConfigError);
  badp = default_params();
  badp.v_reset = 2.0f;  // >= threshold
  CHECK_THROWS_AS(lif_sequence(badp, Tensor::zeros({1, 2})), ConfigError);
}
