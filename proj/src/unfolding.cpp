// SPDX-License-Identifier: Apache-2.0
#include "cassi/unfolding.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace cassi {

using ag::Var;
using nlohmann::json;

Tensor cube_to_chw(const HSICube& cube) {
  Tensor out({cube.bands, cube.height, cube.width});
  for (int h = 0; h < cube.height; ++h)
    for (int w = 0; w < cube.width; ++w)
      for (int c = 0; c < cube.bands; ++c)
        out.at(c, h, w) = cube.at(h, w, c);
  return out;
}

HSICube chw_to_cube(const Tensor& chw) {
  HSICube cube = HSICube::zeros(chw.dim(1), chw.dim(2), chw.dim(0));
  for (int c = 0; c < cube.bands; ++c)
    for (int h = 0; h < cube.height; ++h)
      for (int w = 0; w < cube.width; ++w)
        cube.at(h, w, c) = chw.at(c, h, w);
  return cube;
}

Tensor operator_to_chw(const OperatorRep& op) {
  Tensor out({op.bands, op.height, op.meas_width});
  for (int h = 0; h < op.height; ++h)
    for (int m = 0; m < op.meas_width; ++m)
      for (int c = 0; c < op.bands; ++c)
        out.at(c, h, m) = op.shifted_mask.at(h, m, c);
  return out;
}

HSICube gradient_step(const HSICube& x, const Measurement& y,
                      const OperatorRep& op, double rho) {
  Measurement ax = apply_forward(x, op);
  for (std::size_t i = 0; i < ax.data.size(); ++i) ax.data[i] -= y.data[i];
  HSICube adj = apply_adjoint(ax, op);
  HSICube out = x;
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] -= rho * adj.data[i];
  return out;
}

void UnfoldConfig::validate() const {
  if (stages < 1) throw std::invalid_argument("UnfoldConfig: stages < 1");
  if (bands < 1) throw std::invalid_argument("UnfoldConfig: bands < 1");
  if (step < 0) throw std::invalid_argument("UnfoldConfig: negative step");
  if (n_dlcb < 1) throw std::invalid_argument("UnfoldConfig: n_dlcb < 1");
  mix.validate();
}

std::string UnfoldConfig::to_json() const {
  json j;
  j["stages"] = stages;
  j["share_stages"] = share_stages;
  j["use_residual_degradation"] = use_residual_degradation;
  j["use_stage_interaction"] = use_stage_interaction;
  j["n_dlcb"] = n_dlcb;
  j["rho_init"] = rho_init;
  j["reuse_phi_hat"] = reuse_phi_hat;
  j["bands"] = bands;
  j["step"] = step;
  j["channels"] = mix.channels;
  j["levels"] = mix.levels;
  j["blocks"] = mix.blocks;
  j["heads"] = mix.heads;
  j["gdfn_expansion"] = mix.gdfn_expansion;
  j["use_spatial_branch"] = mix.use_spatial_branch;
  j["use_bidirectional"] = mix.use_bidirectional;
  j["use_block_interaction"] = mix.use_block_interaction;
  return j.dump(2);
}

UnfoldConfig UnfoldConfig::from_json(const std::string& text) {
  json j = json::parse(text);
  UnfoldConfig c;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("stages", c.stages);
  get("share_stages", c.share_stages);
  get("use_residual_degradation", c.use_residual_degradation);
  get("use_stage_interaction", c.use_stage_interaction);
  get("n_dlcb", c.n_dlcb);
  get("rho_init", c.rho_init);
  get("reuse_phi_hat", c.reuse_phi_hat);
  get("bands", c.bands);
  get("step", c.step);
  get("channels", c.mix.channels);
  get("levels", c.mix.levels);
  get("blocks", c.mix.blocks);
  get("heads", c.mix.heads);
  get("gdfn_expansion", c.mix.gdfn_expansion);
  get("use_spatial_branch", c.mix.use_spatial_branch);
  get("use_bidirectional", c.mix.use_bidirectional);
  get("use_block_interaction", c.mix.use_block_interaction);
  c.validate();
  return c;
}

DlcbNet::DlcbNet(nn::ParamStore& store, const std::string& name, int bands,
                 int n_blocks, Rng& rng) {
  const int width = 2 * bands;
  for (int i = 0; i < n_blocks; ++i) {
    Block b;
    b.pw = nn::Conv2d(store, name + ".blk" + std::to_string(i) + ".pw", width,
                      width, 1, 1, rng);
    b.dw = nn::Conv2d(store, name + ".blk" + std::to_string(i) + ".dw", width,
                      width, 3, width, rng);
    blocks.push_back(std::move(b));
  }
  final_proj = nn::Conv2d(store, name + ".proj", width, bands, 1, 1, rng,
                          /*zero_init=*/true);
}

Var DlcbNet::forward(const Var& y, const Var& phi, int step) const {
  const int C = phi->value.dim(0);
  // Band-offset copies of y, supported exactly where each shifted band lives.
  Var lifted = ag::repeat_channels(y, C);
  if (step > 0)
    lifted = ag::shift_bands(ag::unshift_bands(lifted, step), step);
  Var cur = ag::concat_ch({lifted, phi});
  for (const auto& b : blocks)
    cur = ag::add(cur, ag::gelu(b.dw(b.pw(cur))));
  return final_proj(cur);
}

namespace {

std::shared_ptr<StageModule> make_stage(nn::ParamStore& store,
                                        const std::string& label,
                                        const UnfoldConfig& cfg, bool with_span,
                                        Rng& rng) {
  auto st = std::make_shared<StageModule>();
  st->rho = nn::scalar_param(store, label + ".rho", cfg.rho_init);
  if (cfg.use_residual_degradation)
    st->rdl = std::make_unique<DlcbNet>(store, label + ".rdl", cfg.bands,
                                        cfg.n_dlcb, rng);
  st->denoiser = std::make_unique<MixS2Denoiser>(
      store, label + ".pm", cfg.bands, cfg.mix,
      with_span && cfg.use_stage_interaction, rng);
  return st;
}

}  // namespace

ModelState ModelState::build(const UnfoldConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ModelState m;
  m.cfg_ = cfg;
  Rng rng(hash_combine(seed, 0x15D37ULL));
  const int K = cfg.stages;
  if (cfg.share_stages) {
    m.unique_.push_back(make_stage(m.store_, "stage_first", cfg, false, rng));
    m.labels_.push_back("stage_first");
    if (K >= 3) {
      m.unique_.push_back(make_stage(m.store_, "stage_shared", cfg, true, rng));
      m.labels_.push_back("stage_shared");
    }
    if (K >= 2) {
      m.unique_.push_back(make_stage(m.store_, "stage_last", cfg, true, rng));
      m.labels_.push_back("stage_last");
    }
    for (int k = 0; k < K; ++k) {
      if (k == 0)
        m.per_stage_.push_back(m.unique_.front());
      else if (k == K - 1)
        m.per_stage_.push_back(m.unique_.back());
      else
        m.per_stage_.push_back(m.unique_[1]);
    }
  } else {
    for (int k = 0; k < K; ++k) {
      std::string label = "stage_" + std::to_string(k + 1);
      m.unique_.push_back(make_stage(m.store_, label, cfg, k > 0, rng));
      m.labels_.push_back(label);
      m.per_stage_.push_back(m.unique_.back());
    }
  }
  return m;
}

std::vector<StageCensus> ModelState::census() const {
  std::vector<StageCensus> out;
  for (std::size_t u = 0; u < unique_.size(); ++u) {
    StageCensus sc;
    sc.label = labels_[u];
    for (int k = 0; k < cfg_.stages; ++k)
      if (per_stage_[static_cast<std::size_t>(k)] == unique_[u])
        sc.stage_indices.push_back(k + 1);
    const std::string prefix = sc.label + ".";
    for (const auto& [name, v] : store_.items)
      if (name.rfind(prefix, 0) == 0) sc.param_count += v->value.size();
    out.push_back(std::move(sc));
  }
  return out;
}

Var ModelState::run_graph(const Var& y_var, const OperatorRep& op,
                          bool clamp_output, RunTrace* trace) const {
  if (y_var->value.ndim() != 3 || y_var->value.dim(0) != 1 ||
      y_var->value.dim(1) != op.height || y_var->value.dim(2) != op.meas_width)
    throw std::invalid_argument("run_graph: measurement/operator mismatch");
  if (op.bands != cfg_.bands || op.step != cfg_.step)
    throw std::invalid_argument("run_graph: operator does not match config");

  Var phi = ag::constant(operator_to_chw(op), "phi");
  const int step = cfg_.step;
  const int C = cfg_.bands;

  auto forward_op = [&](const Var& x, const Var& m) {
    Var s = step > 0 ? ag::shift_bands(x, step) : x;
    return ag::sum_channels(ag::mul(m, s));
  };
  auto adjoint_op = [&](const Var& r, const Var& m) {
    Var z = ag::mul(m, ag::repeat_channels(r, C));
    return step > 0 ? ag::unshift_bands(z, step) : z;
  };

  Var x = adjoint_op(y_var, phi);
  if (trace) {
    trace->data_fidelity.clear();
    trace->stage_abs_mean.clear();
    trace->x0_chw = x->value;
  }

  std::vector<Var> prev_feats;
  Var cached_phi_hat;
  for (int k = 0; k < cfg_.stages; ++k) {
    const StageModule& st = stage(k);
    Var phi_hat;
    if (st.rdl) {
      if (cfg_.reuse_phi_hat && cached_phi_hat) {
        phi_hat = cached_phi_hat;
      } else {
        Var residual = st.rdl->forward(y_var, phi, step);
        if (trace && k == 0) trace->residual_chw = residual->value;
        phi_hat = ag::add(phi, residual);
        if (cfg_.reuse_phi_hat) cached_phi_hat = phi_hat;
      }
    } else {
      phi_hat = phi;
    }
    Var ax = forward_op(x, phi_hat);
    Var resid = ag::sub(ax, y_var);
    Var adj = adjoint_op(resid, phi_hat);
    Var v = ag::sub(x, ag::mul_scalar(adj, st.rho));

    std::vector<Var> feats;
    x = st.denoiser->forward(
        v, step, cfg_.use_stage_interaction ? prev_feats : std::vector<Var>{},
        &feats);
    if (cfg_.use_stage_interaction) prev_feats = std::move(feats);

    if (trace) {
      Var ax_nominal = forward_op(x, phi);
      double fid = 0.0;
      for (std::size_t i = 0; i < ax_nominal->value.size(); ++i) {
        double d = ax_nominal->value[i] - y_var->value[i];
        fid += d * d;
      }
      trace->data_fidelity.push_back(fid);
      trace->stage_abs_mean.push_back(tensor_abs_mean(x->value));
    }
  }
  return clamp_output ? ag::clamp01(x) : x;
}

HSICube ModelState::run_unfolding(const Measurement& y, const OperatorRep& op,
                                  RunTrace* trace, bool clamp_output) const {
  Tensor ym({1, y.height, y.width});
  for (std::size_t i = 0; i < y.data.size(); ++i) ym[i] = y.data[i];
  Var y_var = ag::constant(std::move(ym), "y");
  Var out = run_graph(y_var, op, clamp_output, trace);
  return chw_to_cube(out->value);
}

namespace {

constexpr char kCkptMagic[4] = {'R', 'D', 'L', 'C'};

void put_u32(std::ofstream& f, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  f.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::ifstream& f) {
  unsigned char b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  if (f.gcount() != 4) throw FormatError("checkpoint: truncated");
  return static_cast<std::uint32_t>(b[0]) |
         (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void save_checkpoint(const ModelState& model, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("checkpoint: cannot open for writing: " + path);
  f.write(kCkptMagic, 4);
  put_u32(f, 1);  // version
  const std::string cfg = model.config().to_json();
  put_u32(f, static_cast<std::uint32_t>(cfg.size()));
  f.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  put_u32(f, static_cast<std::uint32_t>(model.params().items.size()));
  for (const auto& [name, v] : model.params().items) {
    put_u32(f, static_cast<std::uint32_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    const auto& shape = v->value.shape();
    put_u32(f, static_cast<std::uint32_t>(shape.size()));
    for (int d : shape) put_u32(f, static_cast<std::uint32_t>(d));
    f.write(reinterpret_cast<const char*>(v->value.data()),
            static_cast<std::streamsize>(v->value.size() * sizeof(double)));
  }
  if (!f) throw FormatError("checkpoint: short write");
}

ModelState load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("checkpoint: cannot open: " + path);
  char magic[4];
  f.read(magic, 4);
  if (f.gcount() != 4 || std::memcmp(magic, kCkptMagic, 4) != 0)
    throw FormatError("checkpoint: bad magic");
  if (get_u32(f) != 1) throw FormatError("checkpoint: unsupported version");
  std::uint32_t cfg_len = get_u32(f);
  std::string cfg_text(cfg_len, '\0');
  f.read(cfg_text.data(), cfg_len);
  if (f.gcount() != static_cast<std::streamsize>(cfg_len))
    throw FormatError("checkpoint: truncated config");
  ModelState model = ModelState::build(UnfoldConfig::from_json(cfg_text), 0);
  std::uint32_t count = get_u32(f);
  if (count != model.params().items.size())
    throw FormatError("checkpoint: parameter count mismatch");
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint32_t name_len = get_u32(f);
    std::string name(name_len, '\0');
    f.read(name.data(), name_len);
    std::uint32_t ndim = get_u32(f);
    std::vector<int> shape(ndim);
    for (auto& d : shape) d = static_cast<int>(get_u32(f));
    ag::Var v = model.params().find(name);
    if (!v) throw FormatError("checkpoint: unknown parameter " + name);
    if (shape != v->value.shape())
      throw FormatError("checkpoint: shape mismatch for " + name);
    f.read(reinterpret_cast<char*>(v->value.data()),
           static_cast<std::streamsize>(v->value.size() * sizeof(double)));
    if (f.gcount() !=
        static_cast<std::streamsize>(v->value.size() * sizeof(double)))
      throw FormatError("checkpoint: truncated tensor " + name);
  }
  return model;
}

}  // namespace cassi
