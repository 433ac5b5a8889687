// SPDX-License-Identifier: Apache-2.0
#include "cassi/cassi_forward.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "cassi/rng.hpp"

namespace cassi {

OperatorRep OperatorRep::from_mask(const CodedMask& mask, int bands, int step) {
  if (bands < 1) throw std::invalid_argument("OperatorRep: bands < 1");
  if (step < 0) throw std::invalid_argument("OperatorRep: negative step");
  OperatorRep op;
  op.height = mask.height;
  op.bands = bands;
  op.step = step;
  op.meas_width = mask.width + step * (bands - 1);
  op.shifted_mask = Tensor({op.height, op.meas_width, bands});
  for (int h = 0; h < op.height; ++h)
    for (int w = 0; w < mask.width; ++w)
      for (int c = 0; c < bands; ++c)
        op.shifted_mask.at(h, w + step * c, c) = mask.data.at(h, w);
  return op;
}

Tensor shift_cube(const Tensor& cube, int step) {
  if (cube.ndim() != 3) throw std::invalid_argument("shift_cube: need H x W x C");
  if (step < 0) throw std::invalid_argument("shift_cube: negative step");
  const int H = cube.dim(0), W = cube.dim(1), C = cube.dim(2);
  Tensor out({H, W + step * (C - 1), C});
  for (int h = 0; h < H; ++h)
    for (int w = 0; w < W; ++w)
      for (int c = 0; c < C; ++c)
        out.at(h, w + step * c, c) = cube.at(h, w, c);
  return out;
}

Tensor unshift_cube(const Tensor& shifted, int step) {
  if (shifted.ndim() != 3)
    throw std::invalid_argument("unshift_cube: need H x Wm x C");
  if (step < 0) throw std::invalid_argument("unshift_cube: negative step");
  const int H = shifted.dim(0), Wm = shifted.dim(1), C = shifted.dim(2);
  const int W = Wm - step * (C - 1);
  if (W < 1) throw std::invalid_argument("unshift_cube: width/step mismatch");
  Tensor out({H, W, C});
  for (int h = 0; h < H; ++h)
    for (int w = 0; w < W; ++w)
      for (int c = 0; c < C; ++c)
        out.at(h, w, c) = shifted.at(h, w + step * c, c);
  return out;
}

Measurement apply_forward(const HSICube& cube, const OperatorRep& op) {
  if (cube.height != op.height || cube.bands != op.bands ||
      cube.width != op.cube_width())
    throw std::invalid_argument("apply_forward: shape mismatch");
  Measurement y{op.height, op.meas_width,
                Tensor({op.height, op.meas_width}), std::nullopt};
  for (int h = 0; h < op.height; ++h)
    for (int w = 0; w < cube.width; ++w)
      for (int c = 0; c < op.bands; ++c)
        y.data.at(h, w + op.step * c) +=
            op.shifted_mask.at(h, w + op.step * c, c) * cube.at(h, w, c);
  return y;
}

HSICube apply_adjoint(const Measurement& y, const OperatorRep& op) {
  if (y.height != op.height || y.width != op.meas_width)
    throw std::invalid_argument("apply_adjoint: shape mismatch");
  HSICube x = HSICube::zeros(op.height, op.cube_width(), op.bands);
  for (int h = 0; h < op.height; ++h)
    for (int w = 0; w < x.width; ++w)
      for (int c = 0; c < op.bands; ++c)
        x.at(h, w, c) =
            op.shifted_mask.at(h, w + op.step * c, c) * y.data.at(h, w + op.step * c);
  return x;
}

std::vector<double> build_dense_operator(const OperatorRep& op) {
  const int H = op.height, W = op.cube_width(), C = op.bands;
  const std::uint64_t voxels =
      static_cast<std::uint64_t>(H) * static_cast<std::uint64_t>(W) *
      static_cast<std::uint64_t>(C);
  if (voxels > 100000ull)
    throw std::length_error("build_dense_operator: exceeds 1e5-voxel cap");
  const std::size_t rows = static_cast<std::size_t>(H) * op.meas_width;
  const std::size_t cols = static_cast<std::size_t>(voxels);
  std::vector<double> m(rows * cols, 0.0);
  for (int h = 0; h < H; ++h)
    for (int w = 0; w < W; ++w)
      for (int c = 0; c < C; ++c) {
        std::size_t row = static_cast<std::size_t>(h) * op.meas_width +
                          (w + op.step * c);
        std::size_t col =
            (static_cast<std::size_t>(h) * W + w) * C + c;
        m[row * cols + col] = op.shifted_mask.at(h, w + op.step * c, c);
      }
  return m;
}

Tensor operator_row_sq_norms(const OperatorRep& op) {
  Tensor d({op.height, op.meas_width});
  for (int h = 0; h < op.height; ++h)
    for (int m = 0; m < op.meas_width; ++m) {
      double s = 0.0;
      for (int c = 0; c < op.bands; ++c) {
        double v = op.shifted_mask.at(h, m, c);
        s += v * v;
      }
      d.at(h, m) = s;
    }
  return d;
}

Measurement add_shot_noise(const Measurement& y, int bits, std::uint64_t seed) {
  if (bits < 1 || bits > 31)
    throw std::invalid_argument("add_shot_noise: bits out of range");
  double ymax = 0.0;
  for (std::size_t i = 0; i < y.data.size(); ++i) {
    if (y.data[i] < 0.0)
      throw std::invalid_argument("add_shot_noise: negative measurement");
    ymax = std::max(ymax, y.data[i]);
  }
  Measurement out = y;
  out.noise_meta = NoiseMeta{bits, seed};
  if (ymax == 0.0) return out;  // y == 0 stays 0
  const double full_well = static_cast<double>((1u << bits) - 1u);
  const double s = full_well / ymax;
  Rng rng(hash_combine(seed, 0x40153ULL));
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = static_cast<double>(rng.poisson(s * y.data[i])) / s;
  return out;
}

}  // namespace cassi
