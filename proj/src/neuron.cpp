#include "sac/neuron.hpp"

#include <cmath>

// This translation unit is built with -ffp-contract=off: the float sequence
// of the membrane update is part of the module contract (lif_sequence must
// match an independently written scalar simulation bit-for-float).

namespace sac::neuron {

namespace {

constexpr double kPiHalf = 1.5707963267948966192313216916398;

void check_finite(const Tensor& x, const char* op) {
  const float* p = x.data();
  Dim n = x.numel();
  for (Dim i = 0; i < n; ++i) {
    if (!std::isfinite(p[i]))
      throw NumericError(strf("%s: non-finite input at flat index %lld", op,
                              static_cast<long long>(i)));
  }
}

float surrogate_f(Surrogate kind, float alpha, float u) {
  return static_cast<float>(surrogate_value(kind, alpha, u));
}

}  // namespace

const char* to_string(Surrogate s) { return s == Surrogate::Atan ? "atan" : "sigmoid"; }

Surrogate surrogate_from_string(const std::string& s) {
  if (s == "atan") return Surrogate::Atan;
  if (s == "sigmoid") return Surrogate::Sigmoid;
  throw ConfigError("unknown surrogate '" + s + "' (expected atan|sigmoid)");
}

void validate(const LIFParams& p) {
  if (!(p.tau > 0.0f)) throw ConfigError(strf("LIF: tau must be > 0, got %g", p.tau));
  if (!(p.v_threshold > p.v_reset))
    throw ConfigError(strf("LIF: v_threshold (%g) must exceed v_reset (%g)", p.v_threshold,
                           p.v_reset));
  if (!(p.alpha > 0.0f)) throw ConfigError(strf("LIF: alpha must be > 0, got %g", p.alpha));
  if (p.refractory_steps < 0) throw ConfigError("LIF: refractory_steps must be >= 0");
}

double surrogate_value(Surrogate kind, double alpha, double x) {
  switch (kind) {
    case Surrogate::Atan: {
      double t = kPiHalf * alpha * x;
      return alpha / (2.0 * (1.0 + t * t));
    }
    case Surrogate::Sigmoid: {
      double s = 1.0 / (1.0 + std::exp(-alpha * x));
      return alpha * s * (1.0 - s);
    }
  }
  throw ConfigError("unknown surrogate kind");
}

LIFState initial_state(const LIFParams& p, const Shape& shape) {
  LIFState s;
  s.v = Tensor::full(shape, p.v_rest);
  s.refractory.assign(static_cast<size_t>(numel_of(shape)), 0);
  return s;
}

std::pair<Tensor, LIFState> lif_step(const LIFParams& p, const LIFState& state,
                                     const Tensor& input) {
  validate(p);
  if (state.v.shape() != input.shape())
    throw ShapeError(strf("lif_step: state %s vs input %s", shape_str(state.v.shape()).c_str(),
                          shape_str(input.shape()).c_str()));
  check_finite(input, "lif_step");
  Dim n = input.numel();
  const float inv_tau = 1.0f / p.tau;
  const float* pv = state.v.data();
  const float* px = input.data();

  auto spikes_impl = std::make_shared<TensorImpl>();
  spikes_impl->shape = input.shape();
  spikes_impl->values = std::make_shared<std::vector<float>>(static_cast<size_t>(n));
  auto vnew_impl = std::make_shared<TensorImpl>();
  vnew_impl->shape = input.shape();
  vnew_impl->values = std::make_shared<std::vector<float>>(static_cast<size_t>(n));

  LIFState next;
  next.refractory.assign(static_cast<size_t>(n), 0);
  auto u_buf = std::make_shared<std::vector<float>>(static_cast<size_t>(n));
  auto mask_buf = std::make_shared<std::vector<std::uint8_t>>(static_cast<size_t>(n));

  float* ps = spikes_impl->values->data();
  float* pvn = vnew_impl->values->data();
  for (Dim i = 0; i < n; ++i) {
    float t1 = pv[i] - p.v_rest;
    float t2 = -t1;
    float t3 = p.r * px[i];
    float h = pv[i] + inv_tau * (t2 + t3);
    bool in_refractory = state.refractory[static_cast<size_t>(i)] > 0;
    bool spike = !in_refractory && h >= p.v_threshold;
    ps[i] = spike ? 1.0f : 0.0f;
    pvn[i] = spike ? p.v_reset : h;
    (*u_buf)[static_cast<size_t>(i)] = h - p.v_threshold;
    (*mask_buf)[static_cast<size_t>(i)] = in_refractory ? 1 : 0;
    next.refractory[static_cast<size_t>(i)] =
        spike ? p.refractory_steps
              : std::max(state.refractory[static_cast<size_t>(i)] - 1, 0);
  }

  Tensor spikes(spikes_impl);
  next.v = Tensor(vnew_impl);

  Tape* tape = Tape::active();
  if (tape && (input.requires_grad() || state.v.requires_grad())) {
    auto xi = input.impl();
    auto vi = state.v.impl();
    LIFParams pp = p;
    tape->record("lif_step", {spikes_impl, vnew_impl},
                 [xi, vi, spikes_impl, vnew_impl, u_buf, mask_buf, pp, inv_tau, n](GradFlow& flow) {
      const auto* gs = flow.find(spikes_impl.get());
      const auto* gv = flow.find(vnew_impl.get());
      if (!gs && !gv) return;
      const float* sp = spikes_impl->values->data();
      std::span<float> dx = xi->requires_grad ? flow.of(xi) : std::span<float>();
      std::span<float> dv = vi->requires_grad ? flow.of(vi) : std::span<float>();
      const float din_scale = pp.r * inv_tau;
      const float carry = 1.0f - inv_tau;
      for (Dim i = 0; i < n; ++i) {
        float dh = 0.0f;
        if (gs && !(*mask_buf)[static_cast<size_t>(i)])
          dh += (*gs)[static_cast<size_t>(i)] *
                surrogate_f(pp.surrogate, pp.alpha, (*u_buf)[static_cast<size_t>(i)]);
        if (gv) dh += (*gv)[static_cast<size_t>(i)] * (1.0f - sp[i]);  // detach-reset
        if (!dx.empty()) dx[static_cast<size_t>(i)] += dh * din_scale;
        if (!dv.empty()) dv[static_cast<size_t>(i)] += dh * carry;
      }
    });
  }
  return {spikes, next};
}

Tensor lif_sequence(const LIFParams& p, const Tensor& input_seq) {
  validate(p);
  if (input_seq.ndim() < 1 || input_seq.dim(0) < 1)
    throw ContractError(strf("lif_sequence: need T >= 1 on the leading axis, got %s",
                             shape_str(input_seq.shape()).c_str()));
  check_finite(input_seq, "lif_sequence");
  Dim t_steps = input_seq.dim(0);
  Dim n = input_seq.numel() / t_steps;
  const float inv_tau = 1.0f / p.tau;
  const float* px = input_seq.data();

  auto out_impl = std::make_shared<TensorImpl>();
  out_impl->shape = input_seq.shape();
  out_impl->values = std::make_shared<std::vector<float>>(static_cast<size_t>(t_steps * n));
  float* ps = out_impl->values->data();

  auto u_buf = std::make_shared<std::vector<float>>(static_cast<size_t>(t_steps * n));
  bool track_refractory = p.refractory_steps > 0;
  auto mask_buf = std::make_shared<std::vector<std::uint8_t>>(
      track_refractory ? static_cast<size_t>(t_steps * n) : 0);

  std::vector<float> v(static_cast<size_t>(n), p.v_rest);
  std::vector<std::int32_t> refr(track_refractory ? static_cast<size_t>(n) : 0, 0);
  for (Dim t = 0; t < t_steps; ++t) {
    const float* xt = px + t * n;
    float* st = ps + t * n;
    float* ut = u_buf->data() + t * n;
    for (Dim i = 0; i < n; ++i) {
      float t1 = v[static_cast<size_t>(i)] - p.v_rest;
      float t2 = -t1;
      float t3 = p.r * xt[i];
      float h = v[static_cast<size_t>(i)] + inv_tau * (t2 + t3);
      bool in_refractory = track_refractory && refr[static_cast<size_t>(i)] > 0;
      bool spike = !in_refractory && h >= p.v_threshold;
      st[i] = spike ? 1.0f : 0.0f;
      v[static_cast<size_t>(i)] = spike ? p.v_reset : h;
      ut[i] = h - p.v_threshold;
      if (track_refractory) {
        (*mask_buf)[static_cast<size_t>(t * n + i)] = in_refractory ? 1 : 0;
        refr[static_cast<size_t>(i)] =
            spike ? p.refractory_steps : std::max(refr[static_cast<size_t>(i)] - 1, 0);
      }
    }
  }

  Tensor out(out_impl);
  Tape* tape = Tape::active();
  if (tape && input_seq.requires_grad()) {
    auto xi = input_seq.impl();
    LIFParams pp = p;
    bool masked = track_refractory;
    tape->record("lif_sequence", {out_impl},
                 [xi, out_impl, u_buf, mask_buf, pp, inv_tau, t_steps, n, masked](GradFlow& flow) {
      const auto* g = flow.find(out_impl.get());
      if (!g || !xi->requires_grad) return;
      auto dx = flow.of(xi);
      const float* sp = out_impl->values->data();
      const float din_scale = pp.r * inv_tau;
      const float carry = 1.0f - inv_tau;
      std::vector<float> dv(static_cast<size_t>(n), 0.0f);  // BPTT carry
      for (Dim t = t_steps - 1; t >= 0; --t) {
        const float* gt = g->data() + t * n;
        const float* ut = u_buf->data() + t * n;
        const float* st = sp + t * n;
        float* dxt = dx.data() + t * n;
        for (Dim i = 0; i < n; ++i) {
          float ds = gt[i];
          float dh = dv[static_cast<size_t>(i)] * (1.0f - st[i]);
          if (!masked || !(*mask_buf)[static_cast<size_t>(t * n + i)])
            dh += ds * surrogate_f(pp.surrogate, pp.alpha, ut[i]);
          dxt[i] += dh * din_scale;
          dv[static_cast<size_t>(i)] = dh * carry;
        }
      }
    });
  }
  return out;
}

}  // namespace sac::neuron
