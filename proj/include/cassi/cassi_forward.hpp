// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "cassi/hsi_data.hpp"
#include "cassi/tensor.hpp"

namespace cassi {

// The sensing operator as a shifted-mask tensor: band c holds the coded
// mask placed at column offset step*c, zero elsewhere. Immutable after
// construction and shareable across threads.
struct OperatorRep {
  int height = 0;
  int meas_width = 0;  // W + step*(C-1)
  int bands = 0;
  int step = 0;
  Tensor shifted_mask;  // shape {H, meas_width, C}

  int cube_width() const { return meas_width - step * (bands - 1); }

  static OperatorRep from_mask(const CodedMask& mask, int bands, int step);
};

// Dispersion shift: band c of the output at column w + step*c equals band c
// of the input at column w; zero elsewhere. Output width W + step*(C-1).
Tensor shift_cube(const Tensor& cube, int step);
// Exact inverse on the shifted support.
Tensor unshift_cube(const Tensor& shifted, int step);

// y = sum_c shifted_mask[:,:,c] .* shift(x)[:,:,c]
Measurement apply_forward(const HSICube& cube, const OperatorRep& op);
// Band c = unshift(shifted_mask[:,:,c] .* y); the exact transpose.
HSICube apply_adjoint(const Measurement& y, const OperatorRep& op);

// Dense realization of the operator, used as a test oracle only. Row-major
// [H*meas_width] x [H*W*C] with vec(x) in (h, w, c) order. Refuses cubes
// above 1e5 voxels.
std::vector<double> build_dense_operator(const OperatorRep& op);

// diag(Phi Phi^T): per sensor pixel, the sum of squared mask values over
// the bands that land there.
Tensor operator_row_sq_norms(const OperatorRep& op);

// Poisson shot noise at the given bit depth: y_hat = P/s with
// P ~ Poisson(s*y) and s = (2^bits - 1)/max(y). Deterministic per seed.
Measurement add_shot_noise(const Measurement& y, int bits, std::uint64_t seed);

}  // namespace cassi
