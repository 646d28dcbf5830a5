#pragma once

#include <string>
#include <vector>

#include "sac/layers.hpp"
#include "sac/neuron.hpp"

namespace sac::spk {

// SPK blocks turn real-valued features into spike-form features. Variants:
//   SL   - single LIF
//   RL   - LIF -> LIF with a residual around the second (values {0,1,2})
//   MBPL - parallel LIF branches with distinct thresholds; branch spikes pass
//          through one shared membrane-simulation ConvNeXt and are summed
//          (convnext_inner = false sums the raw spikes, values {0..branches})
//   HSL  - input split in half along channels, one LIF per half, re-concat
//   DCL  - 3x3 and 5x5 conv branches (C -> C/2 each) + LIF, channel concat
enum class Variant { SL, RL, MBPL, HSL, DCL };

const char* to_string(Variant v);
Variant variant_from_string(const std::string& s);

struct SpkBlockConfig {
  Variant variant = Variant::SL;
  std::vector<neuron::LIFParams> branches{neuron::LIFParams{}};
  Dim channels = 0;            // feature width at the site (HSL/DCL/MBPL-inner)
  bool convnext_inner = true;  // MBPL only
  bool dcl_norm = false;       // DCL: channel norm between conv and LIF
};

void validate(const SpkBlockConfig& cfg);

// Weightless variant forwards over [T,...] inputs; channel_axis locates the
// hidden dimension (2 for [T,N,C,H,W] maps, -1 for [T,B,L,C] tokens).
Tensor sl_forward(const SpkBlockConfig& cfg, const Tensor& x);
Tensor rl_forward(const SpkBlockConfig& cfg, const Tensor& x);
Tensor mbpl_sum_forward(const SpkBlockConfig& cfg, const Tensor& x);
Tensor hsl_forward(const SpkBlockConfig& cfg, const Tensor& x, int channel_axis = 2);

// Where a block instance sits: Map sites see [T,N,C,H,W], Token sites see
// [T,B,L,C]. DCL and MBPL-with-inner-ConvNeXt need spatial structure and are
// Map-only.
enum class SiteKind { Map, Token };

struct SpkBlock {
  SpkBlockConfig cfg;
  SiteKind kind = SiteKind::Map;
  bool spike_free = false;  // replace the block with a smooth activation
  std::string label;        // site name, used by firing-rate reports
  // MBPL inner ConvNeXt (shared across branches): dw3x3 + LN + C->C/2 ->
  // GELU -> C/2->C + residual. Smooth inside by construction.
  Conv inner_dw;
  Norm inner_norm;
  Conv inner_pw1, inner_pw2;
  // DCL branch convs (no bias), optional norms
  Conv dcl_conv3, dcl_conv5;
  Norm dcl_norm3, dcl_norm5;

  // Mean of the LIF outputs emitted during the last forward (in [0,1] in
  // spiking mode; fraction of positive activations in spike-free mode).
  mutable double last_rate = 0.0;

  static SpkBlock make(ParamRegistry& reg, const std::string& prefix, const SpkBlockConfig& cfg,
                       SiteKind kind, bool spike_free, Rng& rng);
  Tensor forward(const Tensor& x) const;
  Tensor inner_forward(const Tensor& spikes) const;  // MBPL membrane simulation
};

}  // namespace sac::spk
