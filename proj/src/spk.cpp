#include "sac/spk.hpp"

namespace sac::spk {

namespace {

double mean_of(const Tensor& t) {
  double s = 0.0;
  for (float v : t.values()) s += v;
  return s / static_cast<double>(t.numel());
}

double positive_fraction(const Tensor& t) {
  double s = 0.0;
  for (float v : t.values())
    if (v > 0.0f) s += 1.0;
  return s / static_cast<double>(t.numel());
}

void require_variant(const SpkBlockConfig& cfg, Variant v, const char* op) {
  if (cfg.variant != v)
    throw ConfigError(strf("%s called with variant %s", op, to_string(cfg.variant)));
}

Dim channel_dim(const Tensor& x, int axis) {
  int a = axis < 0 ? axis + x.ndim() : axis;
  if (a < 0 || a >= x.ndim())
    throw ShapeError(strf("channel axis %d out of range for %s", axis,
                          shape_str(x.shape()).c_str()));
  return x.dim(a);
}

}  // namespace

const char* to_string(Variant v) {
  switch (v) {
    case Variant::SL: return "sl";
    case Variant::RL: return "rl";
    case Variant::MBPL: return "mbpl";
    case Variant::HSL: return "hsl";
    case Variant::DCL: return "dcl";
  }
  return "?";
}

Variant variant_from_string(const std::string& s) {
  if (s == "sl") return Variant::SL;
  if (s == "rl") return Variant::RL;
  if (s == "mbpl") return Variant::MBPL;
  if (s == "hsl") return Variant::HSL;
  if (s == "dcl") return Variant::DCL;
  throw ConfigError("unknown spk variant '" + s + "' (expected sl|rl|mbpl|hsl|dcl)");
}

void validate(const SpkBlockConfig& cfg) {
  for (const auto& p : cfg.branches) neuron::validate(p);
  size_t n = cfg.branches.size();
  switch (cfg.variant) {
    case Variant::SL:
      if (n < 1) throw ConfigError("SL needs at least 1 LIF branch");
      break;
    case Variant::RL:
      if (n < 2) throw ConfigError("RL needs at least 2 LIF branches");
      break;
    case Variant::MBPL: {
      if (n < 2) throw ConfigError("MBPL needs at least 2 LIF branches");
      for (size_t i = 1; i < n; ++i) {
        if (cfg.branches[i].v_threshold == cfg.branches[i - 1].v_threshold)
          throw ConfigError("MBPL branch thresholds must be distinct");
        if (cfg.branches[i].v_threshold < cfg.branches[i - 1].v_threshold)
          throw ConfigError("MBPL branch thresholds must be strictly increasing");
      }
      break;
    }
    case Variant::HSL:
      if (n != 2) throw ConfigError("HSL needs exactly 2 LIF branches");
      if (cfg.channels > 0 && cfg.channels % 2 != 0)
        throw ConfigError("HSL needs an even channel count");
      break;
    case Variant::DCL:
      if (n != 2) throw ConfigError("DCL needs exactly 2 LIF branches");
      if (cfg.channels > 0 && cfg.channels % 2 != 0)
        throw ConfigError("DCL needs an even channel count");
      break;
  }
}

Tensor sl_forward(const SpkBlockConfig& cfg, const Tensor& x) {
  require_variant(cfg, Variant::SL, "sl_forward");
  validate(cfg);
  return neuron::lif_sequence(cfg.branches[0], x);
}

Tensor rl_forward(const SpkBlockConfig& cfg, const Tensor& x) {
  require_variant(cfg, Variant::RL, "rl_forward");
  validate(cfg);
  Tensor s1 = neuron::lif_sequence(cfg.branches[0], x);
  Tensor s2 = neuron::lif_sequence(cfg.branches[1], s1);
  return add(s2, s1);
}

Tensor mbpl_sum_forward(const SpkBlockConfig& cfg, const Tensor& x) {
  require_variant(cfg, Variant::MBPL, "mbpl_sum_forward");
  validate(cfg);
  Tensor out;
  for (const auto& p : cfg.branches) {
    Tensor s = neuron::lif_sequence(p, x);
    out = out.defined() ? add(out, s) : s;
  }
  return out;
}

Tensor hsl_forward(const SpkBlockConfig& cfg, const Tensor& x, int channel_axis) {
  require_variant(cfg, Variant::HSL, "hsl_forward");
  validate(cfg);
  Dim c = channel_dim(x, channel_axis);
  if (c % 2 != 0)
    throw ShapeError(strf("hsl_forward: odd channel count %lld", static_cast<long long>(c)));
  auto halves = split(x, channel_axis, {c / 2, c / 2});
  Tensor y0 = neuron::lif_sequence(cfg.branches[0], halves[0]);
  Tensor y1 = neuron::lif_sequence(cfg.branches[1], halves[1]);
  return concat({y0, y1}, channel_axis);
}

SpkBlock SpkBlock::make(ParamRegistry& reg, const std::string& prefix, const SpkBlockConfig& cfg,
                        SiteKind kind, bool spike_free, Rng& rng) {
  validate(cfg);
  SpkBlock b;
  b.cfg = cfg;
  b.kind = kind;
  b.spike_free = spike_free;
  b.label = prefix;
  if (spike_free) return b;
  if (cfg.variant == Variant::MBPL && cfg.convnext_inner) {
    if (kind != SiteKind::Map)
      throw ConfigError("MBPL with inner ConvNeXt needs a spatial (map) site: " + prefix);
    if (cfg.channels < 1) throw ConfigError("MBPL inner ConvNeXt needs cfg.channels: " + prefix);
    Dim c = cfg.channels;
    Dim hidden = std::max<Dim>(c / 2, 1);
    b.inner_dw = Conv::make(reg, prefix + ".inner.dw", c, c, 3, 1, 1, static_cast<int>(c), rng);
    b.inner_norm = Norm::make(reg, prefix + ".inner.norm", c);
    b.inner_pw1 = Conv::make(reg, prefix + ".inner.pw1", c, hidden, 1, 1, 0, 1, rng);
    b.inner_pw2 = Conv::make(reg, prefix + ".inner.pw2", hidden, c, 1, 1, 0, 1, rng);
  }
  if (cfg.variant == Variant::DCL) {
    if (kind != SiteKind::Map) throw ConfigError("DCL needs a spatial (map) site: " + prefix);
    if (cfg.channels < 2 || cfg.channels % 2 != 0)
      throw ConfigError("DCL needs an even channel count >= 2: " + prefix);
    Dim c = cfg.channels;
    b.dcl_conv3 = Conv::make(reg, prefix + ".conv3", c, c / 2, 3, 1, 1, 1, rng);
    b.dcl_conv5 = Conv::make(reg, prefix + ".conv5", c, c / 2, 5, 1, 2, 1, rng);
    if (cfg.dcl_norm) {
      b.dcl_norm3 = Norm::make(reg, prefix + ".norm3", c / 2);
      b.dcl_norm5 = Norm::make(reg, prefix + ".norm5", c / 2);
    }
  }
  return b;
}

Tensor SpkBlock::inner_forward(const Tensor& spikes) const {
  Dim t = spikes.dim(0), n = spikes.dim(1), c = spikes.dim(2);
  Dim h = spikes.dim(3), w = spikes.dim(4);
  Tensor s4 = reshape(spikes, {t * n, c, h, w});
  Tensor y = inner_dw(s4);
  y = inner_norm(y, 1);
  y = inner_pw1(y);
  y = gelu(y);
  y = inner_pw2(y);
  y = add(y, s4);
  return reshape(y, spikes.shape());
}

Tensor SpkBlock::forward(const Tensor& x) const {
  if (spike_free) {
    Tensor out = gelu(x);
    last_rate = positive_fraction(out);
    return out;
  }
  switch (cfg.variant) {
    case Variant::SL: {
      Tensor s = neuron::lif_sequence(cfg.branches[0], x);
      last_rate = mean_of(s);
      return s;
    }
    case Variant::RL: {
      Tensor s1 = neuron::lif_sequence(cfg.branches[0], x);
      Tensor s2 = neuron::lif_sequence(cfg.branches[1], s1);
      last_rate = 0.5 * (mean_of(s1) + mean_of(s2));
      return add(s2, s1);
    }
    case Variant::MBPL: {
      if (cfg.convnext_inner && x.ndim() != 5)
        throw ShapeError(strf("MBPL inner ConvNeXt needs [T,N,C,H,W], got %s",
                              shape_str(x.shape()).c_str()));
      double rate = 0.0;
      Tensor out;
      for (const auto& p : cfg.branches) {
        Tensor s = neuron::lif_sequence(p, x);
        rate += mean_of(s);
        Tensor term = cfg.convnext_inner ? inner_forward(s) : s;
        out = out.defined() ? add(out, term) : term;
      }
      last_rate = rate / static_cast<double>(cfg.branches.size());
      return out;
    }
    case Variant::HSL: {
      int axis = kind == SiteKind::Map ? 2 : x.ndim() - 1;
      Dim c = x.dim(axis);
      if (c % 2 != 0)
        throw ShapeError(strf("HSL: odd channel count %lld", static_cast<long long>(c)));
      auto halves = split(x, axis, {c / 2, c / 2});
      Tensor y0 = neuron::lif_sequence(cfg.branches[0], halves[0]);
      Tensor y1 = neuron::lif_sequence(cfg.branches[1], halves[1]);
      last_rate = 0.5 * (mean_of(y0) + mean_of(y1));
      return concat({y0, y1}, axis);
    }
    case Variant::DCL: {
      if (x.ndim() != 5)
        throw ShapeError(strf("DCL needs [T,N,C,H,W], got %s", shape_str(x.shape()).c_str()));
      Dim t = x.dim(0), n = x.dim(1), c = x.dim(2), h = x.dim(3), w = x.dim(4);
      if (c % 2 != 0)
        throw ShapeError(strf("DCL: odd channel count %lld", static_cast<long long>(c)));
      Tensor x4 = reshape(x, {t * n, c, h, w});
      Tensor a = dcl_conv3(x4);
      Tensor b = dcl_conv5(x4);
      if (cfg.dcl_norm) {
        a = dcl_norm3(a, 1);
        b = dcl_norm5(b, 1);
      }
      Tensor a5 = reshape(a, {t, n, c / 2, h, w});
      Tensor b5 = reshape(b, {t, n, c / 2, h, w});
      Tensor sa = neuron::lif_sequence(cfg.branches[0], a5);
      Tensor sb = neuron::lif_sequence(cfg.branches[1], b5);
      last_rate = 0.5 * (mean_of(sa) + mean_of(sb));
      return concat({sa, sb}, 2);
    }
  }
  throw ConfigError("unknown SPK variant");
}

}  // namespace sac::spk
