#include "sac/attention.hpp"

namespace sac::attention {

namespace {

void check_spec(const PartitionSpec& spec) {
  if (spec.size < 1 || spec.h < 1 || spec.w < 1)
    throw GeometryError("partition: spec sizes must be positive");
  if (spec.h % spec.size != 0 || spec.w % spec.size != 0)
    throw GeometryError(strf("partition: size %lld does not divide %lldx%lld",
                             static_cast<long long>(spec.size), static_cast<long long>(spec.h),
                             static_cast<long long>(spec.w)));
}

// out[i] = x[map[i]]; the map is a bijection, so backward is a scatter-add
// over distinct slots.
Tensor gather_bijection(const char* op, const Tensor& x, Shape out_shape,
                        std::shared_ptr<std::vector<Dim>> map) {
  Dim n = numel_of(out_shape);
  std::vector<float> vals(static_cast<size_t>(n));
  const float* px = x.data();
  for (Dim i = 0; i < n; ++i) vals[static_cast<size_t>(i)] = px[(*map)[static_cast<size_t>(i)]];
  return make_op_result(op, std::move(out_shape), std::move(vals), {&x}, [&](const Tensor& out) {
    auto xi = x.impl(), oi = out.impl();
    return [xi, oi, map, n](GradFlow& flow) {
      const auto* g = flow.find(oi.get());
      if (!g || !xi->requires_grad) return;
      auto dx = flow.of(xi);
      for (Dim i = 0; i < n; ++i)
        dx[static_cast<size_t>((*map)[static_cast<size_t>(i)])] += (*g)[static_cast<size_t>(i)];
    };
  });
}

// Flat source index in [N,C,H,W] for each token slot of [N*B, L, C].
std::shared_ptr<std::vector<Dim>> token_map(Dim n, Dim c, const PartitionSpec& spec) {
  Dim size = spec.size, h = spec.h, w = spec.w;
  auto map = std::make_shared<std::vector<Dim>>();
  map->reserve(static_cast<size_t>(n * c * h * w));
  bool grid = spec.mode == PartitionSpec::Mode::Grid;
  Dim bh = h / size, bw = w / size;  // grid: cells, window: tiles
  for (Dim im = 0; im < n; ++im)
    for (Dim by = 0; by < bh; ++by)
      for (Dim bx = 0; bx < bw; ++bx)
        for (Dim i = 0; i < size; ++i)
          for (Dim j = 0; j < size; ++j)
            for (Dim ch = 0; ch < c; ++ch) {
              Dim py = grid ? by + i * bh : by * size + i;
              Dim px = grid ? bx + j * bw : bx * size + j;
              map->push_back(((im * c + ch) * h + py) * w + px);
            }
  return map;
}

}  // namespace

Tensor partition(const Tensor& x, const PartitionSpec& spec) {
  check_spec(spec);
  if (x.ndim() != 4)
    throw ShapeError(strf("partition: need [N,C,H,W], got %s", shape_str(x.shape()).c_str()));
  if (x.dim(2) != spec.h || x.dim(3) != spec.w)
    throw GeometryError(strf("partition: input %s does not match spec %lldx%lld",
                             shape_str(x.shape()).c_str(), static_cast<long long>(spec.h),
                             static_cast<long long>(spec.w)));
  Dim n = x.dim(0), c = x.dim(1);
  Dim l = spec.size * spec.size;
  Dim b = (spec.h / spec.size) * (spec.w / spec.size);
  return gather_bijection("partition", x, {n * b, l, c}, token_map(n, c, spec));
}

Tensor unpartition(const Tensor& tokens, const PartitionSpec& spec, Dim n) {
  check_spec(spec);
  Dim l = spec.size * spec.size;
  Dim b = (spec.h / spec.size) * (spec.w / spec.size);
  if (tokens.ndim() != 3 || tokens.dim(0) != n * b || tokens.dim(1) != l)
    throw ShapeError(strf("unpartition: tokens %s do not match n=%lld spec %lldx%lld/%lld",
                          shape_str(tokens.shape()).c_str(), static_cast<long long>(n),
                          static_cast<long long>(spec.h), static_cast<long long>(spec.w),
                          static_cast<long long>(spec.size)));
  Dim c = tokens.dim(2);
  // invert the token map: token slot feeding each output pixel
  auto fwd = token_map(n, c, spec);
  auto inv = std::make_shared<std::vector<Dim>>(fwd->size());
  for (size_t i = 0; i < fwd->size(); ++i)
    (*inv)[static_cast<size_t>((*fwd)[i])] = static_cast<Dim>(i);
  return gather_bijection("unpartition", tokens, {n, c, spec.h, spec.w}, inv);
}

Tensor partition_time(const Tensor& x, const PartitionSpec& spec) {
  if (x.ndim() != 5)
    throw ShapeError(strf("partition_time: need [T,N,C,H,W], got %s",
                          shape_str(x.shape()).c_str()));
  Dim t = x.dim(0), n = x.dim(1), c = x.dim(2);
  Tensor tok = partition(reshape(x, {t * n, c, x.dim(3), x.dim(4)}), spec);
  Dim b = tok.dim(0) / (t * n);
  return reshape(tok, {t, n * b, tok.dim(1), c});
}

Tensor unpartition_time(const Tensor& tokens, const PartitionSpec& spec, Dim n) {
  if (tokens.ndim() != 4)
    throw ShapeError(strf("unpartition_time: need [T,B,L,C], got %s",
                          shape_str(tokens.shape()).c_str()));
  Dim t = tokens.dim(0), l = tokens.dim(2), c = tokens.dim(3);
  Tensor flat = reshape(tokens, {t * tokens.dim(1), l, c});
  Tensor maps = unpartition(flat, spec, t * n);
  return reshape(maps, {t, n, c, spec.h, spec.w});
}

const char* to_string(AttnVariant v) { return v == AttnVariant::SISA ? "sisa" : "bdsa"; }

AttnVariant attn_from_string(const std::string& s) {
  if (s == "sisa") return AttnVariant::SISA;
  if (s == "bdsa") return AttnVariant::BDSA;
  throw ConfigError("unknown attention variant '" + s + "' (expected sisa|bdsa)");
}

void validate(const AttentionConfig& cfg, Dim channels) {
  if (cfg.heads < 1 || cfg.head_dim < 1)
    throw ConfigError("attention: heads/head_dim must be >= 1");
  if (cfg.heads * cfg.head_dim != channels)
    throw ShapeError(strf("attention: heads*head_dim = %lld does not match channels %lld",
                          static_cast<long long>(cfg.heads * cfg.head_dim),
                          static_cast<long long>(channels)));
  if (cfg.ffn_expansion < 1) throw ConfigError("attention: ffn_expansion must be >= 1");
  if (cfg.spk.variant != spk::Variant::SL && cfg.spk.variant != spk::Variant::HSL)
    throw ConfigError("attention spike points must emit binary values (sl or hsl)");
}

namespace {

float resolve_scale(const AttentionConfig& cfg) {
  return cfg.scale > 0.0f ? cfg.scale : 1.0f / static_cast<float>(cfg.head_dim);
}

// [T,B,L,C] -> [T,B,h,L,d]
Tensor to_heads(const Tensor& x, Dim heads, Dim head_dim) {
  Dim t = x.dim(0), b = x.dim(1), l = x.dim(2);
  return permute(reshape(x, {t, b, l, heads, head_dim}), {0, 1, 3, 2, 4});
}

// [T,B,h,L,d] -> [T,B,L,C]
Tensor merge_heads(const Tensor& x) {
  Dim t = x.dim(0), b = x.dim(1), h = x.dim(2), l = x.dim(3), d = x.dim(4);
  return reshape(permute(x, {0, 1, 3, 2, 4}), {t, b, l, h * d});
}

}  // namespace

Tensor sisa_attend(const Tensor& qs, const Tensor& ks, const Tensor& vs, Dim heads, Dim head_dim,
                   float scale, bool use_softmax) {
  Tensor qh = to_heads(qs, heads, head_dim);
  Tensor kh = to_heads(ks, heads, head_dim);
  Tensor vh = to_heads(vs, heads, head_dim);
  Tensor scores = sac::scale(matmul(qh, permute(kh, {0, 1, 2, 4, 3})), scale);
  if (use_softmax) scores = softmax_lastdim(scores);
  return merge_heads(matmul(scores, vh));
}

Tensor bdsa_attend(const Tensor& s, Dim heads, Dim head_dim, float scale) {
  Tensor sh = to_heads(s, heads, head_dim);
  Tensor scores = sac::scale(matmul(sh, permute(sh, {0, 1, 2, 4, 3})), scale);
  return merge_heads(matmul(scores, sh));
}

AttentionBlock AttentionBlock::make(ParamRegistry& reg, const std::string& prefix,
                                    const AttentionConfig& cfg, Dim channels, bool spike_free,
                                    Rng& rng) {
  validate(cfg, channels);
  AttentionBlock b;
  b.cfg = cfg;
  b.channels = channels;
  spk::SpkBlockConfig site = cfg.spk;
  site.channels = channels;
  if (cfg.variant == AttnVariant::SISA) {
    b.wq = Linear::make(reg, prefix + ".wq", channels, channels, rng);
    b.wk = Linear::make(reg, prefix + ".wk", channels, channels, rng);
    b.wv = Linear::make(reg, prefix + ".wv", channels, channels, rng);
    b.wo = Linear::make(reg, prefix + ".wo", channels, channels, rng, Init::Zero);
    b.spk_q =
        spk::SpkBlock::make(reg, prefix + ".q.spk", site, spk::SiteKind::Token, spike_free, rng);
    b.spk_k =
        spk::SpkBlock::make(reg, prefix + ".k.spk", site, spk::SiteKind::Token, spike_free, rng);
    b.spk_v =
        spk::SpkBlock::make(reg, prefix + ".v.spk", site, spk::SiteKind::Token, spike_free, rng);
    b.spk_attn = spk::SpkBlock::make(reg, prefix + ".attn.spk", site, spk::SiteKind::Token,
                                     spike_free, rng);
  } else {
    b.spk_in = spk::SpkBlock::make(reg, prefix + ".in.spk", site, spk::SiteKind::Token, spike_free,
                                   rng);
  }
  Dim hidden = channels * cfg.ffn_expansion;
  b.ffn1 = Linear::make(reg, prefix + ".ffn1", channels, hidden, rng);
  b.ffn2 = Linear::make(reg, prefix + ".ffn2", hidden, channels, rng, Init::Zero);
  spk::SpkBlockConfig fsite = cfg.spk;
  fsite.channels = hidden;
  b.spk_f1 = spk::SpkBlock::make(reg, prefix + ".ffn1.spk", fsite, spk::SiteKind::Token, spike_free,
                                 rng);
  spk::SpkBlockConfig osite = cfg.spk;
  osite.channels = channels;
  b.spk_f2 = spk::SpkBlock::make(reg, prefix + ".ffn2.spk", osite, spk::SiteKind::Token, spike_free,
                                 rng);
  return b;
}

Tensor AttentionBlock::attend(const Tensor& tokens) const {
  if (tokens.ndim() != 4 || tokens.dim(3) != channels)
    throw ShapeError(strf("attention: need [T,B,L,%lld], got %s",
                          static_cast<long long>(channels), shape_str(tokens.shape()).c_str()));
  float s = resolve_scale(cfg);
  if (cfg.variant == AttnVariant::SISA) {
    Tensor qs = spk_q.forward(wq(tokens));
    Tensor ks = spk_k.forward(wk(tokens));
    Tensor vs = spk_v.forward(wv(tokens));
    Tensor a = sisa_attend(qs, ks, vs, cfg.heads, cfg.head_dim, s, cfg.use_softmax);
    return spk_attn.forward(wo(a));
  }
  Tensor spikes = spk_in.forward(tokens);
  return bdsa_attend(spikes, cfg.heads, cfg.head_dim, s);
}

Tensor AttentionBlock::forward(const Tensor& tokens) const {
  Tensor a = attend(tokens);
  Tensor f = spk_f1.forward(ffn1(a));
  return spk_f2.forward(ffn2(f));
}

void AttentionBlock::collect_spk(std::vector<const spk::SpkBlock*>& sites) const {
  if (cfg.variant == AttnVariant::SISA) {
    sites.push_back(&spk_q);
    sites.push_back(&spk_k);
    sites.push_back(&spk_v);
    sites.push_back(&spk_attn);
  } else {
    sites.push_back(&spk_in);
  }
  sites.push_back(&spk_f1);
  sites.push_back(&spk_f2);
}

}  // namespace sac::attention
