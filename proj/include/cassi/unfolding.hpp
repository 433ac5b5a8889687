// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <string>
#include <vector>

#include "cassi/cassi_forward.hpp"
#include "cassi/mixs2.hpp"
#include "cassi/nn.hpp"

namespace cassi {

// Layout conversions between the file/domain layout {H,W,C} and the
// channels-first layout {C,H,W} the network operates on.
Tensor cube_to_chw(const HSICube& cube);
HSICube chw_to_cube(const Tensor& chw);
Tensor operator_to_chw(const OperatorRep& op);  // {C,H,Wm}

// One plain proximal-gradient data step: x - rho * Phi^T(Phi x - y).
HSICube gradient_step(const HSICube& x, const Measurement& y,
                      const OperatorRep& op, double rho);

struct UnfoldConfig {
  int stages = 3;
  bool share_stages = true;
  bool use_residual_degradation = true;
  bool use_stage_interaction = true;
  int n_dlcb = 3;
  double rho_init = 1.0;
  bool reuse_phi_hat = false;
  int bands = 28;
  int step = 2;
  MixS2Config mix;

  void validate() const;
  std::string to_json() const;
  static UnfoldConfig from_json(const std::string& text);
};

// Residual estimator R(y, Phi): the measurement is lifted to C band-offset
// copies, concatenated with the shifted mask, and passed through cascaded
// convolution blocks; the final projection starts at zero so training
// begins from the uncorrected operator.
struct DlcbNet {
  struct Block {
    nn::Conv2d pw, dw;
  };
  std::vector<Block> blocks;
  nn::Conv2d final_proj;

  DlcbNet() = default;
  DlcbNet(nn::ParamStore& store, const std::string& name, int bands,
          int n_blocks, Rng& rng);
  // y {1,H,Wm}, phi {C,H,Wm} -> residual {C,H,Wm}
  ag::Var forward(const ag::Var& y, const ag::Var& phi, int step) const;
};

struct StageModule {
  ag::Var rho;
  std::unique_ptr<DlcbNet> rdl;
  std::unique_ptr<MixS2Denoiser> denoiser;
};

struct StageCensus {
  std::string label;
  std::vector<int> stage_indices;  // 1-based
  std::size_t param_count = 0;
};

// Per-stage fidelity trace and intermediate tensors for diagnostics.
struct RunTrace {
  std::vector<double> data_fidelity;  // ||Phi x_k - y||^2 per stage, nominal Phi
  std::vector<double> stage_abs_mean;
  Tensor x0_chw;
  Tensor residual_chw;  // R(y, Phi) of the first stage, if present
};

class ModelState {
public:
  static ModelState build(const UnfoldConfig& cfg, std::uint64_t seed);

  const UnfoldConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return store_; }
  const nn::ParamStore& params() const { return store_; }
  std::size_t total_params() const { return store_.count(); }
  std::vector<StageCensus> census() const;

  const StageModule& stage(int k) const { return *per_stage_[static_cast<std::size_t>(k)]; }
  StageModule& stage(int k) { return *per_stage_[static_cast<std::size_t>(k)]; }
  bool stages_aliased(int a, int b) const {
    return per_stage_[static_cast<std::size_t>(a)] == per_stage_[static_cast<std::size_t>(b)];
  }

  // Builds the full unfolding graph. y_var is a {1,H,Wm} leaf; returns the
  // reconstruction {C,H,W}. Gradients flow to all registered parameters.
  ag::Var run_graph(const ag::Var& y_var, const OperatorRep& op,
                    bool clamp_output, RunTrace* trace = nullptr) const;

  // Inference entry point: x0 = Phi^T y, K corrected gradient/denoise
  // stages, output clamped to [0,1].
  HSICube run_unfolding(const Measurement& y, const OperatorRep& op,
                        RunTrace* trace = nullptr,
                        bool clamp_output = true) const;

private:
  UnfoldConfig cfg_;
  nn::ParamStore store_;
  std::vector<std::shared_ptr<StageModule>> unique_;
  std::vector<std::string> labels_;
  std::vector<std::shared_ptr<StageModule>> per_stage_;
};

// Checkpoint container: magic "RDLC", version, config echo as JSON, then
// named float64 parameter tensors.
void save_checkpoint(const ModelState& model, const std::string& path);
ModelState load_checkpoint(const std::string& path);

}  // namespace cassi
