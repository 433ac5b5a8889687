// SPDX-License-Identifier: Apache-2.0
#include "cassi/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "cassi/cassi_forward.hpp"
#include "cassi/rng.hpp"

namespace cassi {

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs < 1");
  if (peak_lr <= 0.0) throw std::invalid_argument("TrainConfig: peak_lr <= 0");
  if (warmup_steps < 0) throw std::invalid_argument("TrainConfig: warmup < 0");
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch < 1");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
    throw std::invalid_argument("TrainConfig: betas must be in [0,1)");
  if (patch_size < 8) throw std::invalid_argument("TrainConfig: patch < 8");
}

double charbonnier_loss(const HSICube& pred, const HSICube& target,
                        double eps) {
  if (!pred.data.same_shape(target.data))
    throw std::invalid_argument("charbonnier_loss: shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    double d = pred.data[i] - target.data[i];
    acc += std::sqrt(d * d + eps * eps);
  }
  return acc / static_cast<double>(pred.data.size());
}

double lr_schedule(std::int64_t step, std::int64_t total_steps,
                   const TrainConfig& config) {
  if (total_steps <= 0) return 0.0;
  const std::int64_t warmup = std::min<std::int64_t>(config.warmup_steps,
                                                     total_steps);
  if (step >= total_steps) return 0.0;
  if (warmup > 0 && step < warmup)
    return config.peak_lr * static_cast<double>(step) /
           static_cast<double>(warmup);
  const double progress = static_cast<double>(step - warmup) /
                          static_cast<double>(total_steps - warmup);
  return config.peak_lr * 0.5 * (1.0 + std::cos(M_PI * progress));
}

double psnr(const HSICube& pred, const HSICube& target, double peak) {
  if (!pred.data.same_shape(target.data))
    throw std::invalid_argument("psnr: shape mismatch");
  double mse = 0.0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    double d = pred.data[i] - target.data[i];
    mse += d * d;
  }
  mse /= static_cast<double>(pred.data.size());
  if (mse < 1e-10) return 100.0;
  return 10.0 * std::log10(peak * peak / mse);
}

double ssim(const HSICube& pred, const HSICube& target) {
  if (!pred.data.same_shape(target.data))
    throw std::invalid_argument("ssim: shape mismatch");
  const int H = pred.height, W = pred.width, C = pred.bands;
  int win = 11;
  if (std::min(H, W) < win) {
    win = std::min(H, W);
    if (win % 2 == 0) --win;
  }
  const int r = win / 2;
  const double sigma = 1.5;
  std::vector<double> g(static_cast<std::size_t>(win) * win);
  double gsum = 0.0;
  for (int i = 0; i < win; ++i)
    for (int j = 0; j < win; ++j) {
      double dy = i - r, dx = j - r;
      double v = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      g[static_cast<std::size_t>(i) * win + j] = v;
      gsum += v;
    }
  for (auto& v : g) v /= gsum;

  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double acc = 0.0;
  for (int c = 0; c < C; ++c) {
    double band_acc = 0.0;
    int count = 0;
    for (int y = r; y < H - r; ++y)
      for (int x = r; x < W - r; ++x) {
        double mu1 = 0.0, mu2 = 0.0, s11 = 0.0, s22 = 0.0, s12 = 0.0;
        for (int i = 0; i < win; ++i)
          for (int j = 0; j < win; ++j) {
            const double wgt = g[static_cast<std::size_t>(i) * win + j];
            const double a = pred.at(y + i - r, x + j - r, c);
            const double b = target.at(y + i - r, x + j - r, c);
            mu1 += wgt * a;
            mu2 += wgt * b;
            s11 += wgt * a * a;
            s22 += wgt * b * b;
            s12 += wgt * a * b;
          }
        const double var1 = s11 - mu1 * mu1;
        const double var2 = s22 - mu2 * mu2;
        const double cov = s12 - mu1 * mu2;
        band_acc += ((2.0 * mu1 * mu2 + c1) * (2.0 * cov + c2)) /
                    ((mu1 * mu1 + mu2 * mu2 + c1) * (var1 + var2 + c2));
        ++count;
      }
    acc += count > 0 ? band_acc / count : 1.0;
  }
  return acc / C;
}

double spectral_correlation(const HSICube& pred, const HSICube& target,
                            const Roi& roi) {
  if (!pred.data.same_shape(target.data))
    throw std::invalid_argument("spectral_correlation: shape mismatch");
  if (roi.w < 1 || roi.h < 1 || roi.x < 0 || roi.y < 0 ||
      roi.x + roi.w > pred.width || roi.y + roi.h > pred.height)
    throw std::invalid_argument("spectral_correlation: ROI out of bounds");
  const int C = pred.bands;
  std::vector<double> a(static_cast<std::size_t>(C), 0.0),
      b(static_cast<std::size_t>(C), 0.0);
  const double inv = 1.0 / (static_cast<double>(roi.w) * roi.h);
  for (int c = 0; c < C; ++c) {
    for (int y = roi.y; y < roi.y + roi.h; ++y)
      for (int x = roi.x; x < roi.x + roi.w; ++x) {
        a[static_cast<std::size_t>(c)] += pred.at(y, x, c);
        b[static_cast<std::size_t>(c)] += target.at(y, x, c);
      }
    a[static_cast<std::size_t>(c)] *= inv;
    b[static_cast<std::size_t>(c)] *= inv;
  }
  double ma = 0.0, mb = 0.0;
  for (int c = 0; c < C; ++c) {
    ma += a[static_cast<std::size_t>(c)];
    mb += b[static_cast<std::size_t>(c)];
  }
  ma /= C;
  mb /= C;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (int c = 0; c < C; ++c) {
    const double da = a[static_cast<std::size_t>(c)] - ma;
    const double db = b[static_cast<std::size_t>(c)] - mb;
    cov += da * db;
    va += da * da;
    vb += db * db;
  }
  const double denom = std::sqrt(va * vb);
  if (denom < 1e-24) {
    // Degenerate flat curves: identical means full agreement.
    double diff = 0.0;
    for (int c = 0; c < C; ++c)
      diff = std::max(diff, std::fabs(a[static_cast<std::size_t>(c)] -
                                      b[static_cast<std::size_t>(c)]));
    return diff < 1e-12 ? 1.0 : 0.0;
  }
  return cov / denom;
}

Adam::Adam(std::vector<ag::Var> params, double beta1, double beta2, double eps)
    : b1_(beta1), b2_(beta2), eps_(eps) {
  for (auto& p : params) {
    Slot s;
    s.m = Tensor(p->value.shape());
    s.v = Tensor(p->value.shape());
    s.p = std::move(p);
    slots_.push_back(std::move(s));
  }
}

void Adam::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (auto& s : slots_) {
    const bool has_grad = s.p->grad_alloc;
    for (std::size_t i = 0; i < s.p->value.size(); ++i) {
      const double gr = has_grad ? s.p->grad[i] : 0.0;
      s.m[i] = b1_ * s.m[i] + (1.0 - b1_) * gr;
      s.v[i] = b2_ * s.v[i] + (1.0 - b2_) * gr * gr;
      const double mh = s.m[i] / bc1;
      const double vh = s.v[i] / bc2;
      s.p->value[i] -= lr * mh / (std::sqrt(vh) + eps_);
    }
  }
}

void Adam::zero_grad() {
  for (auto& s : slots_) s.p->clear_grad();
}

namespace {

HSICube crop_cube_at(const HSICube& cube, int oy, int ox, int size) {
  HSICube out = HSICube::zeros(size, size, cube.bands);
  for (int h = 0; h < size; ++h)
    for (int w = 0; w < size; ++w)
      for (int c = 0; c < cube.bands; ++c)
        out.at(h, w, c) = cube.at(h + oy, w + ox, c);
  return out;
}

CodedMask crop_mask_at(const CodedMask& mask, int oy, int ox, int size) {
  CodedMask out{size, size, Tensor({size, size})};
  for (int h = 0; h < size; ++h)
    for (int w = 0; w < size; ++w) out.data.at(h, w) = mask.data.at(h + oy, w + ox);
  return out;
}

}  // namespace

TrainResult train(ModelState& model, const std::vector<HSICube>& scenes,
                  const CodedMask& mask, const TrainConfig& config,
                  const std::string& out_dir) {
  config.validate();
  if (scenes.empty()) throw std::invalid_argument("train: no scenes");
  const UnfoldConfig& mcfg = model.config();
  for (const auto& s : scenes)
    if (s.bands != mcfg.bands)
      throw std::invalid_argument("train: scene band count != model bands");

  std::vector<ag::Var> params;
  for (const auto& [name, v] : model.params().items) params.push_back(v);
  Adam opt(params, config.beta1, config.beta2);

  const std::int64_t steps_per_epoch = static_cast<std::int64_t>(scenes.size());
  const std::int64_t total_steps = steps_per_epoch * config.epochs;
  TrainResult result;
  result.log.reserve(static_cast<std::size_t>(total_steps));

  for (std::int64_t step = 0; step < total_steps; ++step) {
    const HSICube& scene =
        scenes[static_cast<std::size_t>(step % steps_per_epoch)];
    const int patch = std::min({config.patch_size, scene.height, scene.width,
                                mask.height, mask.width});

    ag::Var loss;
    for (int b = 0; b < config.batch_size; ++b) {
      const std::uint64_t s0 =
          hash_combine(config.seed, hash_combine(
                                        static_cast<std::uint64_t>(step),
                                        static_cast<std::uint64_t>(b)));
      Rng rng(s0);
      const int oy = static_cast<int>(
          rng.uniform_int(static_cast<std::uint64_t>(scene.height - patch + 1)));
      const int ox = static_cast<int>(
          rng.uniform_int(static_cast<std::uint64_t>(scene.width - patch + 1)));
      HSICube cube = crop_cube_at(scene, oy, ox, patch);
      if (config.augment)
        cube = apply_augment(cube, static_cast<AugmentOp>(rng.uniform_int(6)));
      const int moy = static_cast<int>(
          rng.uniform_int(static_cast<std::uint64_t>(mask.height - patch + 1)));
      const int mox = static_cast<int>(
          rng.uniform_int(static_cast<std::uint64_t>(mask.width - patch + 1)));
      CodedMask mpatch = crop_mask_at(mask, moy, mox, patch);
      OperatorRep op = OperatorRep::from_mask(mpatch, mcfg.bands, mcfg.step);
      Measurement y = apply_forward(cube, op);
      if (config.noise_bits > 0)
        y = add_shot_noise(y, config.noise_bits, hash_combine(s0, 0x7015EULL));

      Tensor ym({1, y.height, y.width});
      for (std::size_t i = 0; i < y.data.size(); ++i) ym[i] = y.data[i];
      ag::Var y_var = ag::constant(std::move(ym), "y");
      // Loss is taken on the unclamped output; clamping is an inference-time
      // projection and would zero gradients early in training.
      ag::Var pred = model.run_graph(y_var, op, /*clamp_output=*/false);
      ag::Var target = ag::constant(cube_to_chw(cube), "target");
      ag::Var item = ag::charbonnier(pred, target, config.charbonnier_eps);
      loss = loss ? ag::add(loss, item) : item;
    }
    if (config.batch_size > 1)
      loss = ag::affine(loss, 1.0 / config.batch_size, 0.0);

    const double loss_val = loss->value[0];
    if (!std::isfinite(loss_val)) {
      std::ostringstream diag;
      diag << "train: non-finite loss at step " << step << "; stage |x| means:";
      RunTrace trace;
      // Re-run the last item with tracing for the diagnostic dump.
      const std::uint64_t s0 = hash_combine(
          config.seed,
          hash_combine(static_cast<std::uint64_t>(step),
                       static_cast<std::uint64_t>(config.batch_size - 1)));
      Rng rng(s0);
      const int oy = static_cast<int>(rng.uniform_int(
          static_cast<std::uint64_t>(scene.height - patch + 1)));
      const int ox = static_cast<int>(rng.uniform_int(
          static_cast<std::uint64_t>(scene.width - patch + 1)));
      HSICube cube = crop_cube_at(scene, oy, ox, patch);
      if (config.augment)
        cube = apply_augment(cube, static_cast<AugmentOp>(rng.uniform_int(6)));
      const int moy = static_cast<int>(rng.uniform_int(
          static_cast<std::uint64_t>(mask.height - patch + 1)));
      const int mox = static_cast<int>(rng.uniform_int(
          static_cast<std::uint64_t>(mask.width - patch + 1)));
      OperatorRep op = OperatorRep::from_mask(crop_mask_at(mask, moy, mox, patch),
                                              mcfg.bands, mcfg.step);
      Measurement y = apply_forward(cube, op);
      model.run_unfolding(y, op, &trace, false);
      for (double v : trace.stage_abs_mean) diag << " " << v;
      throw std::runtime_error(diag.str());
    }

    const double lr = lr_schedule(step, total_steps, config);
    ag::backward(loss);
    opt.step(lr);
    opt.zero_grad();
    result.log.push_back({step, lr, loss_val});
    result.final_loss = loss_val;

    if (!out_dir.empty() && (step + 1) % steps_per_epoch == 0)
      save_checkpoint(model, out_dir + "/checkpoint.rdlc");
  }

  if (!out_dir.empty()) {
    std::ofstream log_file(out_dir + "/train_log.csv", std::ios::trunc);
    log_file << "step,lr,loss\n";
    char buf[96];
    for (const auto& e : result.log) {
      std::snprintf(buf, sizeof(buf), "%lld,%.10g,%.10g\n",
                    static_cast<long long>(e.step), e.lr, e.loss);
      log_file << buf;
    }
  }
  return result;
}

EvalReport evaluate(const std::vector<HSICube>& preds,
                    const std::vector<HSICube>& truths,
                    const std::vector<std::string>& names,
                    const std::optional<Roi>& roi) {
  if (preds.size() != truths.size() || preds.size() != names.size())
    throw std::invalid_argument("evaluate: list sizes differ");
  if (preds.empty()) throw std::invalid_argument("evaluate: nothing to score");
  EvalReport rep;
  double corr_acc = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    SceneEval se;
    se.name = names[i];
    se.psnr_db = psnr(preds[i], truths[i]);
    se.ssim_val = ssim(preds[i], truths[i]);
    if (roi) {
      se.correlation = spectral_correlation(preds[i], truths[i], *roi);
      corr_acc += *se.correlation;
    }
    rep.avg_psnr += se.psnr_db;
    rep.avg_ssim += se.ssim_val;
    rep.scenes.push_back(std::move(se));
  }
  rep.avg_psnr /= static_cast<double>(preds.size());
  rep.avg_ssim /= static_cast<double>(preds.size());
  if (roi) rep.avg_correlation = corr_acc / static_cast<double>(preds.size());
  return rep;
}

std::string format_report(const EvalReport& report) {
  std::ostringstream os;
  const bool with_corr = report.avg_correlation.has_value();
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-12s %10s %8s%s\n", "Scene", "PSNR(dB)",
                "SSIM", with_corr ? "  SpecCorr" : "");
  os << buf;
  for (const auto& se : report.scenes) {
    if (with_corr)
      std::snprintf(buf, sizeof(buf), "%-12s %10.2f %8.4f %9.4f\n",
                    se.name.c_str(), se.psnr_db, se.ssim_val,
                    se.correlation.value_or(0.0));
    else
      std::snprintf(buf, sizeof(buf), "%-12s %10.2f %8.4f\n", se.name.c_str(),
                    se.psnr_db, se.ssim_val);
    os << buf;
  }
  if (with_corr)
    std::snprintf(buf, sizeof(buf), "%-12s %10.2f %8.4f %9.4f\n", "Avg",
                  report.avg_psnr, report.avg_ssim,
                  report.avg_correlation.value_or(0.0));
  else
    std::snprintf(buf, sizeof(buf), "%-12s %10.2f %8.4f\n", "Avg",
                  report.avg_psnr, report.avg_ssim);
  os << buf;
  return os.str();
}

}  // namespace cassi
