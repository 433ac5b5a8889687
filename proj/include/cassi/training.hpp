// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cassi/hsi_data.hpp"
#include "cassi/unfolding.hpp"

namespace cassi {

struct TrainConfig {
  int epochs = 200;
  double peak_lr = 2e-4;
  int warmup_steps = 1000;
  int batch_size = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  int patch_size = 64;
  std::uint64_t seed = 0;
  bool augment = true;
  int noise_bits = 0;  // 0 disables shot noise
  double charbonnier_eps = 1e-3;

  void validate() const;
};

double charbonnier_loss(const HSICube& pred, const HSICube& target, double eps);

// Linear warmup to peak_lr, then cosine decay to zero at total_steps.
double lr_schedule(std::int64_t step, std::int64_t total_steps,
                   const TrainConfig& config);

double psnr(const HSICube& pred, const HSICube& target, double peak = 1.0);
// Gaussian-window SSIM (11x11, sigma 1.5), valid region, per band then
// averaged. Shrinks the window on images smaller than 11 pixels.
double ssim(const HSICube& pred, const HSICube& target);

struct Roi {
  int x = 0, y = 0, w = 0, h = 0;
};
// Pearson correlation between the per-band ROI-mean curves.
double spectral_correlation(const HSICube& pred, const HSICube& target,
                            const Roi& roi);

class Adam {
public:
  Adam(std::vector<ag::Var> params, double beta1, double beta2,
       double eps = 1e-8);
  void step(double lr);
  void zero_grad();

private:
  struct Slot {
    ag::Var p;
    Tensor m, v;
  };
  std::vector<Slot> slots_;
  double b1_, b2_, eps_;
  std::int64_t t_ = 0;
};

struct TrainLogEntry {
  std::int64_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
};

struct TrainResult {
  std::vector<TrainLogEntry> log;
  double final_loss = 0.0;
};

// One step = one Adam update on batch_size measurement/patch pairs drawn
// from the scene list round-robin. Measurements are synthesized in-loop
// against the coded mask cropped at the same offsets as the cube patch.
// Writes checkpoint.rdlc on each epoch boundary and train_log.csv at the
// end when out_dir is non-empty. Deterministic for a fixed config seed.
TrainResult train(ModelState& model, const std::vector<HSICube>& scenes,
                  const CodedMask& mask, const TrainConfig& config,
                  const std::string& out_dir = "");

struct SceneEval {
  std::string name;
  double psnr_db = 0.0;
  double ssim_val = 0.0;
  std::optional<double> correlation;
};

struct EvalReport {
  std::vector<SceneEval> scenes;
  double avg_psnr = 0.0;
  double avg_ssim = 0.0;
  std::optional<double> avg_correlation;
};

EvalReport evaluate(const std::vector<HSICube>& preds,
                    const std::vector<HSICube>& truths,
                    const std::vector<std::string>& names,
                    const std::optional<Roi>& roi);
std::string format_report(const EvalReport& report);

}  // namespace cassi
