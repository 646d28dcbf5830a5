#pragma once

#include "sac/attention.hpp"
#include "sac/layers.hpp"
#include "sac/spk.hpp"

namespace sac::blocks {

// Spiking ConvNeXt block on [T,N,C,H,W]: depthwise 7x7 -> channel LN ->
// pointwise C->eC -> SPK -> pointwise eC->C -> residual. The closing
// pointwise is zero-initialized so the block starts as the identity.
struct ConvNeXtBlock {
  Dim channels = 0, expansion = 4;
  Conv dw;
  Norm norm;
  Conv pw1, pw2;
  spk::SpkBlock spk_site;

  static ConvNeXtBlock make(ParamRegistry& reg, const std::string& prefix, Dim channels,
                            Dim expansion, const spk::SpkBlockConfig& spk_cfg, bool spike_free,
                            Rng& rng);
  Tensor forward(const Tensor& x) const;
};

// Feature Extraction Layer: conv s2 -> channel LN -> conv s1 on the image,
// replication across T (direct encoding), then the SPK converts to spikes.
struct Stem {
  Dim t = 1, channels = 0;
  Conv conv1, conv2;
  Norm norm;
  spk::SpkBlock spk_site;

  static Stem make(ParamRegistry& reg, const std::string& prefix, Dim in_channels, Dim channels,
                   Dim t, const spk::SpkBlockConfig& spk_cfg, bool spike_free, Rng& rng);
  Tensor forward(const Tensor& images) const;  // [N,3,H,W] -> [T,N,C,H/2,W/2]
};

// Stage entrance: stride-2 conv + channel LN, [T,N,Cin,H,W] -> [T,N,Cout,H/2,W/2].
struct Downsample {
  Conv conv;
  Norm norm;

  static Downsample make(ParamRegistry& reg, const std::string& prefix, Dim in, Dim out, Rng& rng);
  Tensor forward(const Tensor& x) const;
};

// Decision Layer: global average pool per timestep -> linear -> mean over T.
struct Head {
  Linear fc;

  static Head make(ParamRegistry& reg, const std::string& prefix, Dim channels, Dim classes,
                   Rng& rng);
  Tensor forward(const Tensor& x) const;  // [T,N,C,H,W] -> [N,classes]
};

// ConvNeXt -> window attention (residual) -> grid attention (residual).
struct SpikeAtConvBlock {
  Dim window = 0, grid = 0;
  ConvNeXtBlock convnext;
  attention::AttentionBlock attn_window, attn_grid;

  static SpikeAtConvBlock make(ParamRegistry& reg, const std::string& prefix, Dim channels,
                               Dim expansion, Dim window, Dim grid,
                               const spk::SpkBlockConfig& spk_cfg,
                               const attention::AttentionConfig& attn_cfg, bool spike_free,
                               Rng& rng);
  Tensor forward(const Tensor& x) const;
  void collect_spk(std::vector<const spk::SpkBlock*>& sites) const;
};

}  // namespace sac::blocks
