// SPDX-License-Identifier: Apache-2.0
#include "cassi/mixs2.hpp"

#include <cmath>
#include <stdexcept>

namespace cassi {

using ag::Var;

int MixS2Config::total_blocks() const {
  int n = 0;
  for (int l = 0; l < levels - 1; ++l) n += 2 * blocks[static_cast<std::size_t>(l)];
  n += blocks[static_cast<std::size_t>(levels - 1)];
  return n;
}

void MixS2Config::validate() const {
  if (levels < 1) throw std::invalid_argument("MixS2Config: levels < 1");
  if (static_cast<int>(blocks.size()) != levels ||
      static_cast<int>(heads.size()) != levels)
    throw std::invalid_argument("MixS2Config: blocks/heads must list one entry per level");
  if (channels % 4 != 0)
    throw std::invalid_argument("MixS2Config: channels must be divisible by 4");
  for (int l = 0; l < levels; ++l) {
    if (blocks[static_cast<std::size_t>(l)] < 1)
      throw std::invalid_argument("MixS2Config: blocks_per_level < 1");
    if (level_channels(l) % heads[static_cast<std::size_t>(l)] != 0)
      throw std::invalid_argument("MixS2Config: heads must divide level channels");
  }
  if (gdfn_expansion <= 0.0)
    throw std::invalid_argument("MixS2Config: gdfn_expansion <= 0");
}

Var spectral_attention_core(const Var& q, const Var& k, const Var& v,
                            const Var& alpha) {
  const int C = q->value.dim(0), H = q->value.dim(1), W = q->value.dim(2);
  if (!tensor_all_finite(q->value) || !tensor_all_finite(k->value) ||
      !tensor_all_finite(v->value))
    throw std::domain_error("spectral_attention_core: non-finite input");
  Var k_mat = ag::reshape(k, {C, H * W});      // C x HW
  Var q_mat = ag::chw_to_mat(q);               // HW x C
  Var scores = ag::div_scalar(ag::matmul(k_mat, q_mat), alpha);
  Var attn = ag::softmax_rows(scores);         // C x C, rows sum to 1
  Var v_mat = ag::chw_to_mat(v);               // HW x C
  Var out = ag::matmul(v_mat, attn);
  return ag::mat_to_chw(out, C, H, W);
}

SmsaBranch::SmsaBranch(nn::ParamStore& store, const std::string& name,
                       int channels, int n_heads, Rng& rng)
    : heads(n_heads) {
  q_pw = nn::Conv2d(store, name + ".q_pw", channels, channels, 1, 1, rng);
  q_dw = nn::Conv2d(store, name + ".q_dw", channels, channels, 3, channels, rng);
  k_pw = nn::Conv2d(store, name + ".k_pw", channels, channels, 1, 1, rng);
  k_dw = nn::Conv2d(store, name + ".k_dw", channels, channels, 3, channels, rng);
  v_pw = nn::Conv2d(store, name + ".v_pw", channels, channels, 1, 1, rng);
  v_dw = nn::Conv2d(store, name + ".v_dw", channels, channels, 3, channels, rng);
  proj = nn::Conv2d(store, name + ".proj", channels, channels, 1, 1, rng);
  for (int h = 0; h < n_heads; ++h)
    alphas.push_back(nn::scalar_param(
        store, name + ".alpha" + std::to_string(h), 1.0));
}

Var SmsaBranch::forward(const Var& x, const Var& spatial_gate) const {
  Var q = q_dw(q_pw(x));
  Var k = k_dw(k_pw(x));
  Var v = v_dw(v_pw(x));
  if (spatial_gate) {
    q = ag::mul_spatial(q, spatial_gate);
    k = ag::mul_spatial(k, spatial_gate);
    v = ag::mul_spatial(v, spatial_gate);
  }
  const int C = x->value.dim(0);
  const int ch = C / heads;
  std::vector<Var> outs;
  for (int h = 0; h < heads; ++h) {
    Var qs = heads == 1 ? q : ag::slice_ch(q, h * ch, (h + 1) * ch);
    Var ks = heads == 1 ? k : ag::slice_ch(k, h * ch, (h + 1) * ch);
    Var vs = heads == 1 ? v : ag::slice_ch(v, h * ch, (h + 1) * ch);
    outs.push_back(spectral_attention_core(qs, ks, vs,
                                           alphas[static_cast<std::size_t>(h)]));
  }
  Var merged = heads == 1 ? outs[0] : ag::concat_ch(outs);
  return proj(merged);
}

InceptionBranch::InceptionBranch(nn::ParamStore& store, const std::string& name,
                                 int channels, Rng& rng) {
  const int cq = channels / 4;
  a_pw = nn::Conv2d(store, name + ".a_pw", channels, cq, 1, 1, rng);
  b_pw = nn::Conv2d(store, name + ".b_pw", channels, cq, 1, 1, rng);
  b_dw = nn::Conv2d(store, name + ".b_dw", cq, cq, 3, cq, rng);
  c_pw = nn::Conv2d(store, name + ".c_pw", channels, cq, 1, 1, rng);
  c_dw1 = nn::Conv2d(store, name + ".c_dw1", cq, cq, 3, cq, rng);
  c_dw2 = nn::Conv2d(store, name + ".c_dw2", cq, cq, 3, cq, rng);
  d_pw = nn::Conv2d(store, name + ".d_pw", channels, cq, 1, 1, rng);
}

Var InceptionBranch::forward(const Var& x) const {
  Var a = a_pw(x);
  Var b = b_dw(b_pw(x));
  Var c = c_dw2(c_dw1(c_pw(x)));
  Var d = d_pw(ag::avgpool3(x));
  return ag::concat_ch({a, b, c, d});
}

BiInteraction::BiInteraction(nn::ParamStore& store, const std::string& name,
                             int channels, Rng& rng) {
  const int hidden = std::max(1, channels / 4);
  spatial_conv = nn::Conv2d(store, name + ".spatial", channels, 1, 1, 1, rng);
  se_reduce = nn::Conv2d(store, name + ".se_reduce", channels, hidden, 1, 1, rng);
  se_expand = nn::Conv2d(store, name + ".se_expand", hidden, channels, 1, 1, rng);
}

Var BiInteraction::spatial_map(const Var& incep_feats) const {
  return ag::sigmoid(spatial_conv(incep_feats));
}

Var BiInteraction::channel_weights(const Var& attn_feats) const {
  Var z = ag::global_avg_pool(attn_feats);
  return ag::sigmoid(se_expand(ag::gelu(se_reduce(z))));
}

Gdfn::Gdfn(nn::ParamStore& store, const std::string& name, int channels,
           double expansion, Rng& rng) {
  const int hidden = std::max(1, static_cast<int>(std::lround(channels * expansion)));
  p1_pw = nn::Conv2d(store, name + ".p1_pw", channels, hidden, 1, 1, rng);
  p1_dw = nn::Conv2d(store, name + ".p1_dw", hidden, hidden, 3, hidden, rng);
  p2_pw = nn::Conv2d(store, name + ".p2_pw", channels, hidden, 1, 1, rng);
  p2_dw = nn::Conv2d(store, name + ".p2_dw", hidden, hidden, 3, hidden, rng);
  proj = nn::Conv2d(store, name + ".proj", hidden, channels, 1, 1, rng);
}

Var Gdfn::forward(const Var& x) const {
  Var p1 = p1_dw(p1_pw(x));
  Var gate = ag::gelu(p2_dw(p2_pw(x)));
  return proj(ag::mul(p1, gate));
}

SpanModulator::SpanModulator(nn::ParamStore& store, const std::string& name,
                             int channels, Rng& rng) {
  psi_a = nn::Conv2d(store, name + ".psi_a", channels, channels, 1, 1, rng);
  psi_b = nn::Conv2d(store, name + ".psi_b", channels, channels, 1, 1, rng);
  psi_dw = nn::Conv2d(store, name + ".psi_dw", channels, channels, 3, channels,
                      rng, /*zero_init=*/true);
  gam_a = nn::Conv2d(store, name + ".gam_a", channels, channels, 1, 1, rng);
  gam_b = nn::Conv2d(store, name + ".gam_b", channels, channels, 1, 1, rng);
  gam_dw = nn::Conv2d(store, name + ".gam_dw", channels, channels, 3, channels,
                      rng, /*zero_init=*/true);
}

Var SpanModulator::modulate(const Var& cur, const Var& prev_n,
                            const Var& prev_mirror) const {
  Var psi = ag::affine(
      psi_dw(ag::gelu(ag::add(psi_a(prev_n), psi_b(prev_mirror)))), 1.0, 1.0);
  Var gam = gam_dw(ag::gelu(ag::add(gam_a(prev_n), gam_b(prev_mirror))));
  return ag::add(ag::mul(psi, cur), gam);
}

MixS2Block::MixS2Block(nn::ParamStore& store, const std::string& name,
                       int channels, int n_heads, const MixS2Config& cfg,
                       bool with_span, Rng& rng)
    : use_spatial(cfg.use_spatial_branch),
      use_bidirectional(cfg.use_bidirectional) {
  ln1 = nn::LayerNormCh(store, name + ".ln1", channels);
  ln2 = nn::LayerNormCh(store, name + ".ln2", channels);
  smsa = SmsaBranch(store, name + ".smsa", channels, n_heads, rng);
  if (use_spatial) {
    incep = InceptionBranch(store, name + ".incep", channels, rng);
    if (use_bidirectional)
      bi = BiInteraction(store, name + ".bi", channels, rng);
  }
  const int fuse_in = use_spatial ? 2 * channels : channels;
  fuse = nn::Conv2d(store, name + ".fuse", fuse_in, channels, 1, 1, rng);
  gdfn = Gdfn(store, name + ".gdfn", channels, cfg.gdfn_expansion, rng);
  if (with_span) span = SpanModulator(store, name + ".span", channels, rng);
}

Var MixS2Block::forward(const Var& x, const Var& prev_n,
                        const Var& prev_mirror) const {
  Var cur = x;
  if (span && prev_n && prev_mirror)
    cur = span->modulate(cur, prev_n, prev_mirror);
  Var xn = ln1(cur);
  Var incep_out, gate;
  if (use_spatial && incep) {
    incep_out = incep->forward(xn);
    if (use_bidirectional && bi) gate = bi->spatial_map(incep_out);
  }
  Var attn = smsa.forward(xn, gate);
  Var fused;
  if (incep_out) {
    if (use_bidirectional && bi) {
      Var cw = bi->channel_weights(attn);
      incep_out = ag::mul_channels(incep_out, cw);
    }
    fused = fuse(ag::concat_ch({attn, incep_out}));
  } else {
    fused = fuse(attn);
  }
  Var x1 = ag::add(cur, fused);
  return ag::add(x1, gdfn.forward(ln2(x1)));
}

MixS2Denoiser::MixS2Denoiser(nn::ParamStore& store, const std::string& name,
                             int n_bands, const MixS2Config& config,
                             bool with_span, Rng& rng)
    : cfg(config), bands(n_bands) {
  cfg.validate();
  const int L = cfg.levels;
  conv_in = nn::Conv2d(store, name + ".conv_in", bands, cfg.channels, 3, 1, rng);
  conv_out = nn::Conv2d(store, name + ".conv_out", cfg.channels, bands, 3, 1,
                        rng, /*zero_init=*/true);
  int block_id = 0;
  auto make_blocks = [&](int level, int count, const char* tag) {
    std::vector<MixS2Block> bs;
    for (int i = 0; i < count; ++i) {
      bs.emplace_back(store,
                      name + "." + tag + std::to_string(level) + ".b" +
                          std::to_string(i),
                      cfg.level_channels(level),
                      cfg.heads[static_cast<std::size_t>(level)], cfg, with_span,
                      rng);
      ++block_id;
    }
    return bs;
  };
  (void)block_id;
  int sum_enc_ch = 0;
  for (int l = 0; l < L - 1; ++l) {
    enc_blocks.push_back(make_blocks(l, cfg.blocks[static_cast<std::size_t>(l)], "enc"));
    down.emplace_back(store, name + ".down" + std::to_string(l),
                      cfg.level_channels(l), cfg.level_channels(l + 1), 3, 1, rng);
    sum_enc_ch += cfg.level_channels(l);
  }
  bottleneck = make_blocks(L - 1, cfg.blocks[static_cast<std::size_t>(L - 1)], "mid");
  for (int l = L - 2; l >= 0; --l) {
    up.emplace_back(store, name + ".up" + std::to_string(l),
                    cfg.level_channels(l + 1), cfg.level_channels(l), 3, 1, rng);
    if (cfg.use_block_interaction)
      bi_conv.emplace_back(store, name + ".bix" + std::to_string(l), sum_enc_ch,
                           cfg.level_channels(l), 1, 1, rng);
    skip_fuse.emplace_back(store, name + ".skip" + std::to_string(l),
                           2 * cfg.level_channels(l), cfg.level_channels(l), 1,
                           1, rng);
    dec_blocks.push_back(make_blocks(l, cfg.blocks[static_cast<std::size_t>(l)], "dec"));
  }
}

Var MixS2Denoiser::forward(const Var& v, int step,
                           const std::vector<Var>& prev_feats,
                           std::vector<Var>* out_feats) const {
  const int L = cfg.levels;
  const int N = cfg.total_blocks();
  const bool have_prev = static_cast<int>(prev_feats.size()) == N;

  Var z = step > 0 ? ag::shift_bands(v, step) : v;
  const int H = z->value.dim(1), Wm = z->value.dim(2);
  const int mult = 1 << (L - 1);
  const int ph = (mult - H % mult) % mult;
  const int pw = (mult - Wm % mult) % mult;
  Var zp = (ph || pw) ? ag::reflect_pad(z, 0, ph, 0, pw) : z;

  std::vector<Var> feats;
  feats.reserve(static_cast<std::size_t>(N));
  int n = 0;
  auto run_block = [&](const MixS2Block& blk, Var x) {
    Var pn, pm;
    if (have_prev) {
      pn = prev_feats[static_cast<std::size_t>(n)];
      pm = prev_feats[static_cast<std::size_t>(N - 1 - n)];
    }
    Var out = blk.forward(x, pn, pm);
    feats.push_back(out);
    ++n;
    return out;
  };

  Var cur = conv_in(zp);
  std::vector<Var> enc_outs;
  std::vector<std::pair<int, int>> sizes;  // per level spatial dims
  for (int l = 0; l < L - 1; ++l) {
    for (const auto& blk : enc_blocks[static_cast<std::size_t>(l)])
      cur = run_block(blk, cur);
    enc_outs.push_back(cur);
    sizes.emplace_back(cur->value.dim(1), cur->value.dim(2));
    cur = down[static_cast<std::size_t>(l)](
        ag::bilinear(cur, cur->value.dim(1) / 2, cur->value.dim(2) / 2));
  }
  for (const auto& blk : bottleneck) cur = run_block(blk, cur);

  for (int i = 0; i < L - 1; ++i) {
    const int l = L - 2 - i;
    const auto [lh, lw] = sizes[static_cast<std::size_t>(l)];
    cur = up[static_cast<std::size_t>(i)](ag::bilinear(cur, lh, lw));
    Var skip;
    if (cfg.use_block_interaction) {
      std::vector<Var> scaled;
      for (int j = 0; j < L - 1; ++j) {
        Var e = enc_outs[static_cast<std::size_t>(j)];
        if (e->value.dim(1) != lh || e->value.dim(2) != lw)
          e = ag::bilinear(e, lh, lw);
        scaled.push_back(e);
      }
      skip = bi_conv[static_cast<std::size_t>(i)](ag::concat_ch(scaled));
    } else {
      skip = enc_outs[static_cast<std::size_t>(l)];
    }
    cur = skip_fuse[static_cast<std::size_t>(i)](ag::concat_ch({cur, skip}));
    for (const auto& blk : dec_blocks[static_cast<std::size_t>(i)])
      cur = run_block(blk, cur);
  }

  Var res = ag::add(zp, conv_out(cur));
  if (ph || pw) res = ag::crop(res, 0, ph, 0, pw);
  Var out = step > 0 ? ag::unshift_bands(res, step) : res;
  if (out_feats) *out_feats = std::move(feats);
  return out;
}

}  // namespace cassi
