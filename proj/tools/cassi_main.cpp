// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: CASSI simulation, reconstruction (learned and
// model-based), evaluation, plotting, training, and parameter census.

#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cassi/baselines.hpp"
#include "cassi/cassi_forward.hpp"
#include "cassi/hsi_data.hpp"
#include "cassi/plotting.hpp"
#include "cassi/training.hpp"
#include "cassi/unfolding.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Dims {
  int h = 0, w = 0, c = 0;
};

Dims parse_dims(const std::string& text) {
  Dims d;
  if (std::sscanf(text.c_str(), "%dx%dx%d", &d.h, &d.w, &d.c) != 3)
    throw std::invalid_argument("expected HxWxC, got: " + text);
  return d;
}

cassi::Roi parse_roi(const std::string& text) {
  cassi::Roi r;
  if (std::sscanf(text.c_str(), "%d,%d,%d,%d", &r.x, &r.y, &r.w, &r.h) != 4)
    throw std::invalid_argument("expected x,y,w,h, got: " + text);
  return r;
}

std::string timestamp_utc() {
  std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

void write_manifest(const fs::path& path, json manifest) {
  manifest["timestamp"] = timestamp_utc();
  std::ofstream f(path, std::ios::trunc);
  f << manifest.dump(2) << "\n";
  if (!f) throw std::runtime_error("cannot write manifest: " + path.string());
}

cassi::TrainConfig train_config_from_json(const json& j) {
  cassi::TrainConfig c;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("epochs", c.epochs);
  get("peak_lr", c.peak_lr);
  get("warmup_steps", c.warmup_steps);
  get("batch_size", c.batch_size);
  get("beta1", c.beta1);
  get("beta2", c.beta2);
  get("patch_size", c.patch_size);
  get("seed", c.seed);
  get("augment", c.augment);
  get("noise_bits", c.noise_bits);
  get("charbonnier_eps", c.charbonnier_eps);
  c.validate();
  return c;
}

std::string read_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open: " + path);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

std::vector<int> pick_bands(int total, int count) {
  std::vector<int> bands;
  if (count < 1) count = 1;
  if (count > total) count = total;
  for (int i = 0; i < count; ++i)
    bands.push_back(count == 1 ? 0 : i * (total - 1) / (count - 1));
  return bands;
}

int cmd_simulate(const std::string& scene_path, const std::string& synthetic,
                 const std::string& mask_path, const std::string& random_mask,
                 int step, int noise_bits, std::uint64_t seed,
                 const std::string& out_dir) {
  cassi::HSICube truth;
  if (!synthetic.empty()) {
    Dims d = parse_dims(synthetic);
    truth = cassi::generate_synthetic_scene(d.h, d.w, d.c, seed);
  } else if (!scene_path.empty()) {
    truth = cassi::load_cube(scene_path);
  } else {
    std::cerr << "error: simulate needs --scene or --synthetic\n";
    return 2;
  }

  cassi::CodedMask mask;
  if (!mask_path.empty()) {
    mask = cassi::load_mask(mask_path);
    if (mask.height != truth.height || mask.width != truth.width) {
      std::cerr << "error: mask size does not match the scene\n";
      return 1;
    }
  } else {
    cassi::MaskKind kind = cassi::MaskKind::Binary;
    if (random_mask == "uniform") kind = cassi::MaskKind::Uniform;
    else if (random_mask != "binary") {
      std::cerr << "error: --random-mask must be binary or uniform\n";
      return 2;
    }
    mask = cassi::generate_random_mask(truth.height, truth.width,
                                       cassi::hash_combine(seed, 1), kind);
  }

  cassi::OperatorRep op = cassi::OperatorRep::from_mask(mask, truth.bands, step);
  cassi::Measurement y = cassi::apply_forward(truth, op);
  if (noise_bits > 0)
    y = cassi::add_shot_noise(y, noise_bits, cassi::hash_combine(seed, 2));

  fs::create_directories(out_dir);
  const fs::path dir(out_dir);
  cassi::save_cube(truth, (dir / "truth.hsic").string());
  cassi::save_mask(mask, (dir / "mask.hsic").string());
  cassi::save_measurement(y, (dir / "meas.hsic").string());

  json manifest = {
      {"command", "simulate"},
      {"seed", seed},
      {"step", step},
      {"dims", {truth.height, truth.width, truth.bands}},
      {"inputs",
       {{"scene", scene_path.empty() ? synthetic : scene_path},
        {"mask", mask_path.empty() ? "random-" + random_mask : mask_path}}},
      {"outputs", {"truth.hsic", "mask.hsic", "meas.hsic"}},
  };
  if (noise_bits > 0)
    manifest["noise_meta"] = {{"model", "poisson"},
                              {"bits", noise_bits},
                              {"seed", cassi::hash_combine(seed, 2)}};
  write_manifest(dir / "manifest.json", manifest);
  return 0;
}

int cmd_reconstruct(const std::string& method, const std::string& checkpoint,
                    const std::string& meas_path, const std::string& mask_path,
                    int bands, int step, const cassi::SolverConfig& solver,
                    const std::string& out_path) {
  cassi::Measurement y = cassi::load_measurement(meas_path);
  cassi::CodedMask mask = cassi::load_mask(mask_path);
  cassi::HSICube recon;
  if (method == "rdluf") {
    if (checkpoint.empty()) {
      std::cerr << "error: --checkpoint is required for method rdluf\n";
      return 2;
    }
    cassi::ModelState model = cassi::load_checkpoint(checkpoint);
    cassi::OperatorRep op = cassi::OperatorRep::from_mask(
        mask, model.config().bands, model.config().step);
    recon = model.run_unfolding(y, op);
  } else {
    cassi::OperatorRep op = cassi::OperatorRep::from_mask(mask, bands, step);
    if (method == "gaptv")
      recon = cassi::gap_tv_solve(y, op, solver);
    else if (method == "pgdtv")
      recon = cassi::pgd_tv_solve(y, op, solver);
    else {
      std::cerr << "error: unknown method " << method << "\n";
      return 2;
    }
  }
  if (out_path.find('/') != std::string::npos)
    fs::create_directories(fs::path(out_path).parent_path());
  cassi::save_cube(recon, out_path);
  json manifest = {{"command", "reconstruct"},
                   {"method", method},
                   {"inputs", {meas_path, mask_path}},
                   {"checkpoint", checkpoint},
                   {"outputs", {out_path}}};
  write_manifest(out_path + ".manifest.json", manifest);
  return 0;
}

int cmd_eval(const std::vector<std::string>& preds,
             const std::vector<std::string>& truths, const std::string& roi_text,
             const std::string& out_path) {
  if (preds.size() != truths.size() || preds.empty()) {
    std::cerr << "error: --pred and --truth must list the same number of cubes\n";
    return 2;
  }
  std::vector<cassi::HSICube> p, t;
  std::vector<std::string> names;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    p.push_back(cassi::load_cube(preds[i]));
    t.push_back(cassi::load_cube(truths[i]));
    names.push_back("scene" + std::to_string(i + 1));
  }
  std::optional<cassi::Roi> roi;
  if (!roi_text.empty()) roi = parse_roi(roi_text);
  cassi::EvalReport rep = cassi::evaluate(p, t, names, roi);
  const std::string text = cassi::format_report(rep);
  std::cout << text;
  if (!out_path.empty()) {
    std::ofstream f(out_path, std::ios::trunc);
    f << text;
    if (!f) {
      std::cerr << "error: cannot write report: " << out_path << "\n";
      return 1;
    }
  }
  return 0;
}

int cmd_plot(const std::string& cube_path, const std::string& pred_path,
             const std::string& truth_path, int band_count,
             const std::string& roi_text, bool residual_viz,
             const std::string& checkpoint, const std::string& meas_path,
             const std::string& mask_path, const std::string& out_dir) {
  fs::create_directories(out_dir);
  const fs::path dir(out_dir);
  bool wrote = false;

  if (!cube_path.empty()) {
    cassi::HSICube cube = cassi::load_cube(cube_path);
    cassi::plot_band_grid(cube, pick_bands(cube.bands, band_count),
                          (dir / "bands.png").string());
    wrote = true;
  }
  if (!pred_path.empty() && !truth_path.empty()) {
    cassi::HSICube pred = cassi::load_cube(pred_path);
    cassi::HSICube truth = cassi::load_cube(truth_path);
    cassi::plot_band_grid(pred, pick_bands(pred.bands, band_count),
                          (dir / "pred_bands.png").string());
    cassi::plot_band_grid(truth, pick_bands(truth.bands, band_count),
                          (dir / "truth_bands.png").string());
    cassi::Roi roi{0, 0, truth.width, truth.height};
    if (!roi_text.empty()) roi = parse_roi(roi_text);
    std::vector<double> pm(static_cast<std::size_t>(pred.bands), 0.0),
        tm(static_cast<std::size_t>(truth.bands), 0.0);
    const double inv = 1.0 / (static_cast<double>(roi.w) * roi.h);
    for (int c = 0; c < pred.bands; ++c) {
      for (int y = roi.y; y < roi.y + roi.h; ++y)
        for (int x = roi.x; x < roi.x + roi.w; ++x) {
          pm[static_cast<std::size_t>(c)] += pred.at(y, x, c) * inv;
          tm[static_cast<std::size_t>(c)] += truth.at(y, x, c) * inv;
        }
    }
    const double corr = cassi::spectral_correlation(pred, truth, roi);
    cassi::plot_spectral_curves(pm, tm, corr, (dir / "spectra.png").string());
    wrote = true;
  }
  if (residual_viz) {
    if (checkpoint.empty() || meas_path.empty() || mask_path.empty()) {
      std::cerr << "error: --residual-viz needs --checkpoint, --measurement "
                   "and --mask\n";
      return 2;
    }
    cassi::ModelState model = cassi::load_checkpoint(checkpoint);
    cassi::Measurement y = cassi::load_measurement(meas_path);
    cassi::CodedMask mask = cassi::load_mask(mask_path);
    cassi::OperatorRep op = cassi::OperatorRep::from_mask(
        mask, model.config().bands, model.config().step);
    cassi::RunTrace trace;
    model.run_unfolding(y, op, &trace);
    auto band_mean = [](const cassi::Tensor& chw) {
      cassi::Tensor out({chw.dim(1), chw.dim(2)});
      for (int c = 0; c < chw.dim(0); ++c)
        for (int h = 0; h < chw.dim(1); ++h)
          for (int w = 0; w < chw.dim(2); ++w)
            out.at(h, w) += chw.at(c, h, w) / chw.dim(0);
      return out;
    };
    cassi::Tensor phi = band_mean(cassi::operator_to_chw(op));
    cassi::plot_normalized_map(phi, (dir / "phi.png").string());
    if (trace.residual_chw.size() > 0) {
      cassi::plot_normalized_map(band_mean(trace.residual_chw),
                                 (dir / "residual.png").string());
      cassi::Tensor phi_hat = band_mean(cassi::operator_to_chw(op));
      const cassi::Tensor r = band_mean(trace.residual_chw);
      for (std::size_t i = 0; i < phi_hat.size(); ++i) phi_hat[i] += r[i];
      cassi::plot_normalized_map(phi_hat, (dir / "phi_hat.png").string());
    }
    wrote = true;
  }
  if (!wrote) {
    std::cerr << "error: plot needs --cube, --pred/--truth, or --residual-viz\n";
    return 2;
  }
  json manifest = {{"command", "plot"}, {"out_dir", out_dir}};
  write_manifest(dir / "manifest.json", manifest);
  return 0;
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& scene_paths,
              const std::string& synthetic, int synth_count,
              const std::string& mask_path, const std::string& random_mask,
              const std::string& out_dir) {
  const std::string cfg_text = read_file(config_path);
  cassi::UnfoldConfig ucfg = cassi::UnfoldConfig::from_json(cfg_text);
  cassi::TrainConfig tcfg = train_config_from_json(json::parse(cfg_text));

  std::vector<cassi::HSICube> scenes;
  for (const auto& p : scene_paths) scenes.push_back(cassi::load_cube(p));
  if (!synthetic.empty()) {
    Dims d = parse_dims(synthetic);
    if (d.c != ucfg.bands) {
      std::cerr << "error: synthetic band count must match config bands\n";
      return 2;
    }
    for (int i = 0; i < std::max(1, synth_count); ++i)
      scenes.push_back(cassi::generate_synthetic_scene(
          d.h, d.w, d.c, cassi::hash_combine(tcfg.seed, 100 + i)));
  }
  if (scenes.empty()) {
    std::cerr << "error: train needs --scene or --synthetic\n";
    return 2;
  }

  cassi::CodedMask mask;
  if (!mask_path.empty()) {
    mask = cassi::load_mask(mask_path);
  } else {
    cassi::MaskKind kind = random_mask == "uniform" ? cassi::MaskKind::Uniform
                                                    : cassi::MaskKind::Binary;
    mask = cassi::generate_random_mask(scenes[0].height, scenes[0].width,
                                       cassi::hash_combine(tcfg.seed, 7), kind);
  }

  fs::create_directories(out_dir);
  cassi::ModelState model = cassi::ModelState::build(ucfg, tcfg.seed);
  cassi::TrainResult result = cassi::train(model, scenes, mask, tcfg, out_dir);
  cassi::save_checkpoint(model, out_dir + "/checkpoint.rdlc");

  json manifest = {{"command", "train"},
                   {"config", config_path},
                   {"seed", tcfg.seed},
                   {"steps", result.log.size()},
                   {"final_loss", result.final_loss},
                   {"outputs", {"checkpoint.rdlc", "train_log.csv"}}};
  write_manifest(fs::path(out_dir) / "manifest.json", manifest);
  std::cout << "trained " << result.log.size() << " steps, final loss "
            << result.final_loss << "\n";
  return 0;
}

int cmd_census(const std::string& config_path, const std::string& checkpoint) {
  cassi::ModelState model =
      !checkpoint.empty()
          ? cassi::load_checkpoint(checkpoint)
          : cassi::ModelState::build(
                cassi::UnfoldConfig::from_json(read_file(config_path)), 0);
  auto census = model.census();
  std::size_t total = 0;
  for (const auto& sc : census) {
    std::cout << sc.label << " (stages";
    for (int k : sc.stage_indices) std::cout << " " << k;
    std::cout << "): " << sc.param_count << " params\n";
    total += sc.param_count;
  }
  std::cout << "total unique params: " << total << "\n";
  std::cout << "stages: " << model.config().stages
            << (model.config().share_stages ? " (shared)" : " (unshared)")
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Compressive spectral imaging toolkit"};
  app.require_subcommand(1);

  // simulate
  std::string sim_scene, sim_synth, sim_mask, sim_random_mask = "binary";
  std::string sim_out = "sim_out";
  int sim_step = 2, sim_noise_bits = 0;
  std::uint64_t sim_seed = 0;
  auto* sim = app.add_subcommand("simulate", "Synthesize a CASSI measurement");
  sim->add_option("--scene", sim_scene, "Input cube (HSIC)");
  sim->add_option("--synthetic", sim_synth, "Generate a scene, HxWxC");
  sim->add_option("--mask", sim_mask, "Coded mask (HSIC)");
  sim->add_option("--random-mask", sim_random_mask, "binary|uniform");
  sim->add_option("--step", sim_step, "Dispersion step (default 2)");
  sim->add_option("--noise-bits", sim_noise_bits, "Shot noise bit depth, 0=off");
  sim->add_option("--seed", sim_seed, "RNG seed");
  sim->add_option("--out", sim_out, "Output directory");

  // reconstruct
  std::string rec_method = "gaptv", rec_ckpt, rec_meas, rec_mask,
              rec_out = "recon.hsic";
  int rec_bands = 28, rec_step = 2;
  cassi::SolverConfig solver;
  auto* rec = app.add_subcommand("reconstruct", "Recover a cube");
  rec->add_option("--method", rec_method, "rdluf|gaptv|pgdtv")->required();
  rec->add_option("--checkpoint", rec_ckpt, "Model checkpoint (rdluf)");
  rec->add_option("--measurement", rec_meas, "Measurement (HSIC)")->required();
  rec->add_option("--mask", rec_mask, "Coded mask (HSIC)")->required();
  rec->add_option("--bands", rec_bands, "Band count (baselines)");
  rec->add_option("--step", rec_step, "Dispersion step (baselines)");
  rec->add_option("--iterations", solver.iterations, "Solver iterations");
  rec->add_option("--rho", solver.rho, "PGD step size");
  rec->add_option("--tv-weight", solver.tv_weight, "TV weight");
  rec->add_option("--tv-inner", solver.tv_inner_iters, "TV inner iterations");
  rec->add_option("--out", rec_out, "Output cube path");

  // eval
  std::vector<std::string> eval_preds, eval_truths;
  std::string eval_roi, eval_out;
  auto* ev = app.add_subcommand("eval", "Score reconstructions");
  ev->add_option("--pred", eval_preds, "Predicted cube(s)")->required();
  ev->add_option("--truth", eval_truths, "Ground-truth cube(s)")->required();
  ev->add_option("--roi", eval_roi, "ROI x,y,w,h for spectral correlation");
  ev->add_option("--out", eval_out, "Report file");

  // plot
  std::string plot_cube, plot_pred, plot_truth, plot_roi, plot_ckpt, plot_meas,
      plot_mask, plot_out = "plots";
  int plot_bands = 4;
  bool plot_residual = false;
  auto* pl = app.add_subcommand("plot", "Emit PNG visualizations");
  pl->add_option("--cube", plot_cube, "Cube to render");
  pl->add_option("--pred", plot_pred, "Predicted cube");
  pl->add_option("--truth", plot_truth, "Ground-truth cube");
  pl->add_option("--bands", plot_bands, "Number of bands in the grid");
  pl->add_option("--roi", plot_roi, "ROI x,y,w,h for spectral curves");
  pl->add_flag("--residual-viz", plot_residual, "Render Phi / R / Phi_hat");
  pl->add_option("--checkpoint", plot_ckpt, "Checkpoint for residual viz");
  pl->add_option("--measurement", plot_meas, "Measurement for residual viz");
  pl->add_option("--mask", plot_mask, "Mask for residual viz");
  pl->add_option("--out-dir", plot_out, "Output directory");

  // train
  std::string tr_config, tr_synth, tr_mask, tr_random_mask = "binary",
              tr_out = "train_out";
  std::vector<std::string> tr_scenes;
  int tr_synth_count = 1;
  auto* tr = app.add_subcommand("train", "Train the unfolding model");
  tr->add_option("--config", tr_config, "JSON config")->required();
  tr->add_option("--scene", tr_scenes, "Training cube(s) (HSIC)");
  tr->add_option("--synthetic", tr_synth, "Generate scenes, HxWxC");
  tr->add_option("--count", tr_synth_count, "Number of synthetic scenes");
  tr->add_option("--mask", tr_mask, "Coded mask (HSIC)");
  tr->add_option("--random-mask", tr_random_mask, "binary|uniform");
  tr->add_option("--out", tr_out, "Output directory");

  // census
  std::string cen_config, cen_ckpt;
  auto* cen = app.add_subcommand("census", "Print per-stage parameter counts");
  cen->add_option("--config", cen_config, "JSON config");
  cen->add_option("--checkpoint", cen_ckpt, "Checkpoint");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed())
      return cmd_simulate(sim_scene, sim_synth, sim_mask, sim_random_mask,
                          sim_step, sim_noise_bits, sim_seed, sim_out);
    if (rec->parsed())
      return cmd_reconstruct(rec_method, rec_ckpt, rec_meas, rec_mask,
                             rec_bands, rec_step, solver, rec_out);
    if (ev->parsed()) return cmd_eval(eval_preds, eval_truths, eval_roi, eval_out);
    if (pl->parsed())
      return cmd_plot(plot_cube, plot_pred, plot_truth, plot_bands, plot_roi,
                      plot_residual, plot_ckpt, plot_meas, plot_mask, plot_out);
    if (tr->parsed())
      return cmd_train(tr_config, tr_scenes, tr_synth, tr_synth_count, tr_mask,
                       tr_random_mask, tr_out);
    if (cen->parsed()) {
      if (cen_config.empty() && cen_ckpt.empty()) {
        std::cerr << "error: census needs --config or --checkpoint\n";
        return 2;
      }
      return cmd_census(cen_config, cen_ckpt);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
