#pragma once

#include <string>

#include "sac/layers.hpp"
#include "sac/spk.hpp"

namespace sac::attention {

struct PartitionSpec {
  enum class Mode { Window, Grid };
  Mode mode = Mode::Window;
  Dim size = 0;  // window edge P or grid edge G; must divide h and w
  Dim h = 0, w = 0;
};

// [N,C,H,W] -> [N*B, L, C]. Window mode gathers contiguous PxP tiles
// (B = HW/P^2, L = P^2). Grid mode gathers strided samples: token (i,j) of
// cell (a,b) is pixel (a + i*(H/G), b + j*(W/G)), giving a global receptive
// field (B = HW/G^2, L = G^2). No padding: non-divisible dims are a geometry
// error, the model guarantees divisibility by construction.
Tensor partition(const Tensor& x, const PartitionSpec& spec);
// Exact inverse; n is the batch size of the original map.
Tensor unpartition(const Tensor& tokens, const PartitionSpec& spec, Dim n);

// Time-axis wrappers: [T,N,C,H,W] <-> [T, N*B, L, C].
Tensor partition_time(const Tensor& x, const PartitionSpec& spec);
Tensor unpartition_time(const Tensor& tokens, const PartitionSpec& spec, Dim n);

enum class AttnVariant { SISA, BDSA };
const char* to_string(AttnVariant v);
AttnVariant attn_from_string(const std::string& s);

struct AttentionConfig {
  AttnVariant variant = AttnVariant::SISA;
  Dim heads = 1;
  Dim head_dim = 8;
  float scale = 0.0f;        // <= 0 selects 1/head_dim (binary scores grow ~d)
  bool use_softmax = false;  // SISA score softmax; BDSA is the fixed formula
  Dim ffn_expansion = 4;
  // Spike conversion points; must emit binary values (SL or HSL).
  spk::SpkBlockConfig spk;
};

void validate(const AttentionConfig& cfg, Dim channels);

// Attention cores on already-spiking tokens [T,B,L,C], split per head.
//   SISA: scores = Qs Ks^T * scale (optional softmax); out = scores Vs
//   BDSA: out = (S S^T * scale) S, Q = K = V = S
Tensor sisa_attend(const Tensor& qs, const Tensor& ks, const Tensor& vs, Dim heads, Dim head_dim,
                   float scale, bool use_softmax);
Tensor bdsa_attend(const Tensor& s, Dim heads, Dim head_dim, float scale);

// One Attention SpikeMerge unit on tokens [T,B,L,C]: the attention variant
// followed by the spiking FFN (linear -> SPK -> linear -> SPK). Residual
// wiring around the whole unit belongs to the caller.
struct AttentionBlock {
  AttentionConfig cfg;
  Dim channels = 0;
  Linear wq, wk, wv, wo;  // SISA projections; wo zero-initialized
  Linear ffn1, ffn2;      // ffn2 zero-initialized
  spk::SpkBlock spk_q, spk_k, spk_v, spk_attn;  // SISA conversion points
  spk::SpkBlock spk_in;                         // BDSA conversion point
  spk::SpkBlock spk_f1, spk_f2;                 // FFN conversion points

  static AttentionBlock make(ParamRegistry& reg, const std::string& prefix,
                             const AttentionConfig& cfg, Dim channels, bool spike_free, Rng& rng);
  Tensor forward(const Tensor& tokens) const;
  Tensor attend(const Tensor& tokens) const;  // attention result before the FFN
  void collect_spk(std::vector<const spk::SpkBlock*>& sites) const;
};

}  // namespace sac::attention
