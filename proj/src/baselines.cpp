// SPDX-License-Identifier: Apache-2.0
#include "cassi/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "cassi/unfolding.hpp"

namespace cassi {

void SolverConfig::validate() const {
  if (iterations < 0) throw std::invalid_argument("SolverConfig: iterations < 0");
  if (tv_weight < 0.0) throw std::invalid_argument("SolverConfig: tv_weight < 0");
  if (tv_inner_iters < 1)
    throw std::invalid_argument("SolverConfig: tv_inner_iters < 1");
  if (rho <= 0.0) throw std::invalid_argument("SolverConfig: rho <= 0");
}

double tv_objective(const HSICube& z, const HSICube& x, double lam) {
  double fid = 0.0, tv = 0.0;
  for (std::size_t i = 0; i < z.data.size(); ++i) {
    double d = z.data[i] - x.data[i];
    fid += d * d;
  }
  for (int c = 0; c < z.bands; ++c)
    for (int h = 0; h < z.height; ++h)
      for (int w = 0; w < z.width; ++w) {
        if (w + 1 < z.width)
          tv += std::fabs(z.at(h, w + 1, c) - z.at(h, w, c));
        if (h + 1 < z.height)
          tv += std::fabs(z.at(h + 1, w, c) - z.at(h, w, c));
      }
  return 0.5 * fid + lam * tv;
}

namespace {

// One band of the dual projection scheme. p1/p2 hold the dual field,
// clamped componentwise to [-1, 1]; z = x - lam * div(p).
struct DualState {
  int H, W;
  std::vector<double> p1, p2, z;

  explicit DualState(int h, int w)
      : H(h), W(w),
        p1(static_cast<std::size_t>(h) * w, 0.0),
        p2(static_cast<std::size_t>(h) * w, 0.0),
        z(static_cast<std::size_t>(h) * w, 0.0) {}

  void recompute_z(const double* x, double lam) {
    for (int i = 0; i < H; ++i)
      for (int j = 0; j < W; ++j) {
        const std::size_t idx = static_cast<std::size_t>(i) * W + j;
        double div = p1[idx] + p2[idx];
        if (j > 0) div -= p1[idx - 1];
        if (i > 0) div -= p2[idx - static_cast<std::size_t>(W)];
        z[idx] = x[idx] - lam * div;
      }
  }

  void update_p(double tau, double lam) {
    for (int i = 0; i < H; ++i)
      for (int j = 0; j < W; ++j) {
        const std::size_t idx = static_cast<std::size_t>(i) * W + j;
        const double gx = j + 1 < W ? z[idx + 1] - z[idx] : 0.0;
        const double gy = i + 1 < H ? z[idx + static_cast<std::size_t>(W)] - z[idx] : 0.0;
        // projected dual descent, step tau <= 1/8
        p1[idx] = std::clamp(p1[idx] - tau / lam * gx, -1.0, 1.0);
        p2[idx] = std::clamp(p2[idx] - tau / lam * gy, -1.0, 1.0);
      }
  }
};

}  // namespace

HSICube tv_denoise(const HSICube& x, double lam, int inner_iters,
                   std::vector<double>* objectives) {
  if (lam < 0.0) throw std::invalid_argument("tv_denoise: negative weight");
  if (inner_iters < 1) throw std::invalid_argument("tv_denoise: inner_iters < 1");
  if (objectives) objectives->clear();
  if (lam == 0.0) return x;

  const int H = x.height, W = x.width, C = x.bands;
  const double tau = 0.125;
  std::vector<DualState> states;
  states.reserve(static_cast<std::size_t>(C));
  std::vector<std::vector<double>> band_x(static_cast<std::size_t>(C));
  for (int c = 0; c < C; ++c) {
    band_x[static_cast<std::size_t>(c)].resize(static_cast<std::size_t>(H) * W);
    for (int h = 0; h < H; ++h)
      for (int w = 0; w < W; ++w)
        band_x[static_cast<std::size_t>(c)][static_cast<std::size_t>(h) * W + w] =
            x.at(h, w, c);
    states.emplace_back(H, W);
    states.back().recompute_z(band_x[static_cast<std::size_t>(c)].data(), lam);
  }

  HSICube out = x;
  auto export_z = [&]() {
    for (int c = 0; c < C; ++c)
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w)
          out.at(h, w, c) =
              states[static_cast<std::size_t>(c)].z[static_cast<std::size_t>(h) * W + w];
  };

  for (int it = 0; it < inner_iters; ++it) {
    for (int c = 0; c < C; ++c) {
      auto& st = states[static_cast<std::size_t>(c)];
      st.update_p(tau, lam);
      st.recompute_z(band_x[static_cast<std::size_t>(c)].data(), lam);
    }
    if (objectives) {
      export_z();
      objectives->push_back(tv_objective(out, x, lam));
    }
  }
  export_z();
  return out;
}

HSICube pgd_tv_solve(const Measurement& y, const OperatorRep& op,
                     const SolverConfig& config,
                     std::vector<double>* fidelity_trace) {
  config.validate();
  if (fidelity_trace) fidelity_trace->clear();
  HSICube x = apply_adjoint(y, op);
  for (int it = 0; it < config.iterations; ++it) {
    HSICube v = gradient_step(x, y, op, config.rho);
    x = config.tv_weight > 0.0
            ? tv_denoise(v, config.rho * config.tv_weight, config.tv_inner_iters)
            : v;
    if (fidelity_trace) {
      Measurement ax = apply_forward(x, op);
      double fid = 0.0;
      for (std::size_t i = 0; i < ax.data.size(); ++i) {
        double d = ax.data[i] - y.data[i];
        fid += d * d;
      }
      fidelity_trace->push_back(fid);
    }
  }
  return x;
}

HSICube gap_tv_solve(const Measurement& y, const OperatorRep& op,
                     const SolverConfig& config,
                     std::vector<double>* fidelity_trace) {
  config.validate();
  if (fidelity_trace) fidelity_trace->clear();
  Tensor diag = operator_row_sq_norms(op);
  for (std::size_t i = 0; i < diag.size(); ++i)
    diag[i] = std::max(diag[i], 1e-8);  // mask zeros leave empty sensor pixels

  HSICube x = apply_adjoint(y, op);
  for (int it = 0; it < config.iterations; ++it) {
    Measurement r = apply_forward(x, op);
    for (std::size_t i = 0; i < r.data.size(); ++i)
      r.data[i] = (y.data[i] - r.data[i]) / diag[i];
    HSICube corr = apply_adjoint(r, op);
    for (std::size_t i = 0; i < x.data.size(); ++i)
      x.data[i] += corr.data[i];
    if (config.tv_weight > 0.0)
      x = tv_denoise(x, config.tv_weight, config.tv_inner_iters);
    if (fidelity_trace) {
      Measurement ax = apply_forward(x, op);
      double fid = 0.0;
      for (std::size_t i = 0; i < ax.data.size(); ++i) {
        double d = ax.data[i] - y.data[i];
        fid += d * d;
      }
      fidelity_trace->push_back(fid);
    }
  }
  return x;
}

}  // namespace cassi
