// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cassi/autograd.hpp"
#include "cassi/nn.hpp"

namespace cassi {

// Architecture knobs for the denoiser. The ablation flags gate whole
// component groups; parameters for a disabled component are never created.
struct MixS2Config {
  int channels = 32;
  int levels = 3;
  std::vector<int> blocks = {1, 1, 1};
  std::vector<int> heads = {1, 2, 4};
  double gdfn_expansion = 2.0;
  bool use_spatial_branch = true;
  bool use_bidirectional = true;
  bool use_block_interaction = true;

  int level_channels(int level) const { return channels << level; }
  int total_blocks() const;
  void validate() const;
};

// Channel-axis attention: A = softmax_rows(K Q / alpha), output V A. Q, K, V
// are {C,H,W} projections; alpha is a learnable scalar. The attention map is
// C x C, so cost is linear in pixel count.
ag::Var spectral_attention_core(const ag::Var& q, const ag::Var& k,
                                const ag::Var& v, const ag::Var& alpha);

struct SmsaBranch {
  nn::Conv2d q_pw, q_dw, k_pw, k_dw, v_pw, v_dw, proj;
  std::vector<ag::Var> alphas;  // one per head
  int heads = 1;

  SmsaBranch() = default;
  SmsaBranch(nn::ParamStore& store, const std::string& name, int channels,
             int n_heads, Rng& rng);
  // spatial_gate may be null; when present it multiplies Q, K and V.
  ag::Var forward(const ag::Var& x, const ag::Var& spatial_gate) const;
};

// Four parallel paths of C/4 channels each: 1x1; 1x1+DConv3; 1x1+DConv3x2
// (5x5 receptive field); 3x3 average pool + 1x1.
struct InceptionBranch {
  nn::Conv2d a_pw, b_pw, b_dw, c_pw, c_dw1, c_dw2, d_pw;

  InceptionBranch() = default;
  InceptionBranch(nn::ParamStore& store, const std::string& name, int channels,
                  Rng& rng);
  ag::Var forward(const ag::Var& x) const;
};

struct BiInteraction {
  nn::Conv2d spatial_conv;          // inception feats -> 1-channel gate
  nn::Conv2d se_reduce, se_expand;  // squeeze-excitation on attention feats

  BiInteraction() = default;
  BiInteraction(nn::ParamStore& store, const std::string& name, int channels,
                Rng& rng);
  ag::Var spatial_map(const ag::Var& incep_feats) const;
  ag::Var channel_weights(const ag::Var& attn_feats) const;  // {C,1,1}
};

struct Gdfn {
  nn::Conv2d p1_pw, p1_dw, p2_pw, p2_dw, proj;

  Gdfn() = default;
  Gdfn(nn::ParamStore& store, const std::string& name, int channels,
       double expansion, Rng& rng);
  ag::Var forward(const ag::Var& x) const;
};

// Spatially adaptive modulation from previous-stage features. The DConv
// heads are zero-initialized, so modulation starts as the identity map.
struct SpanModulator {
  nn::Conv2d psi_a, psi_b, psi_dw;
  nn::Conv2d gam_a, gam_b, gam_dw;

  SpanModulator() = default;
  SpanModulator(nn::ParamStore& store, const std::string& name, int channels,
                Rng& rng);
  ag::Var modulate(const ag::Var& cur, const ag::Var& prev_n,
                   const ag::Var& prev_mirror) const;
};

struct MixS2Block {
  nn::LayerNormCh ln1, ln2;
  SmsaBranch smsa;
  std::optional<InceptionBranch> incep;
  std::optional<BiInteraction> bi;
  nn::Conv2d fuse;
  Gdfn gdfn;
  std::optional<SpanModulator> span;
  bool use_spatial = true;
  bool use_bidirectional = true;

  MixS2Block() = default;
  MixS2Block(nn::ParamStore& store, const std::string& name, int channels,
             int n_heads, const MixS2Config& cfg, bool with_span, Rng& rng);
  ag::Var forward(const ag::Var& x, const ag::Var& prev_n,
                  const ag::Var& prev_mirror) const;
};

// U-shaped denoiser over the shifted measurement-width domain. Input and
// output are {C,H,W} cubes; the dispersion shift, padding to a multiple of
// 2^(levels-1), and their inverses happen inside.
struct MixS2Denoiser {
  MixS2Config cfg;
  int bands = 0;
  nn::Conv2d conv_in, conv_out;
  std::vector<std::vector<MixS2Block>> enc_blocks;  // per level < levels-1
  std::vector<nn::Conv2d> down;                     // after bilinear x0.5
  std::vector<MixS2Block> bottleneck;
  std::vector<nn::Conv2d> up;            // after bilinear x2, per level
  std::vector<nn::Conv2d> bi_conv;       // block interaction, per level
  std::vector<nn::Conv2d> skip_fuse;     // per level
  std::vector<std::vector<MixS2Block>> dec_blocks;

  MixS2Denoiser() = default;
  MixS2Denoiser(nn::ParamStore& store, const std::string& name, int bands,
                const MixS2Config& cfg, bool with_span, Rng& rng);

  // prev_feats: all block outputs from the previous stage (or empty).
  // out_feats, when given, collects this stage's block outputs.
  ag::Var forward(const ag::Var& v, int step,
                  const std::vector<ag::Var>& prev_feats,
                  std::vector<ag::Var>* out_feats) const;
};

}  // namespace cassi
