// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "cassi/cassi_forward.hpp"
#include "cassi/rng.hpp"

using namespace cassi;

namespace {

HSICube random_cube(int h, int w, int c, std::uint64_t seed) {
  Rng rng(seed);
  HSICube cube = HSICube::zeros(h, w, c);
  for (std::size_t i = 0; i < cube.data.size(); ++i) cube.data[i] = rng.uniform();
  return cube;
}

CodedMask random_mask(int h, int w, std::uint64_t seed, bool binary = true) {
  return generate_random_mask(h, w, seed,
                              binary ? MaskKind::Binary : MaskKind::Uniform);
}

Measurement random_meas(const OperatorRep& op, std::uint64_t seed) {
  Rng rng(seed);
  Measurement y{op.height, op.meas_width, Tensor({op.height, op.meas_width}),
                std::nullopt};
  for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] = rng.uniform();
  return y;
}

// Dense-matrix reference: y = M vec(x).
Measurement dense_forward(const std::vector<double>& m, const HSICube& x,
                          const OperatorRep& op) {
  const std::size_t rows = static_cast<std::size_t>(op.height) * op.meas_width;
  const std::size_t cols = x.data.size();
  Measurement y{op.height, op.meas_width, Tensor({op.height, op.meas_width}),
                std::nullopt};
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += m[r * cols + c] * x.data[c];
    y.data[r] = acc;
  }
  return y;
}

HSICube dense_adjoint(const std::vector<double>& m, const Measurement& y,
                      const OperatorRep& op) {
  const std::size_t rows = y.data.size();
  const std::size_t cols =
      static_cast<std::size_t>(op.height) * op.cube_width() * op.bands;
  HSICube x = HSICube::zeros(op.height, op.cube_width(), op.bands);
  for (std::size_t c = 0; c < cols; ++c) {
    double acc = 0.0;
    for (std::size_t r = 0; r < rows; ++r) acc += m[r * cols + c] * y.data[r];
    x.data[c] = acc;
  }
  return x;
}

}  // namespace

TEST_CASE("shift with step 0 is the identity") {
  HSICube cube = random_cube(5, 6, 3, 1);
  Tensor out = shift_cube(cube.data, 0);
  CHECK(out.same_shape(cube.data));
  CHECK(tensor_max_abs_diff(out, cube.data) == 0.0);
}

TEST_CASE("dispersion widens to W + step*(C-1)") {
  HSICube cube = random_cube(8, 256, 28, 2);
  Tensor out = shift_cube(cube.data, 2);
  CHECK(out.dim(1) == 310);
}

TEST_CASE("3x3x2 cube at step 2: band 1 occupies columns 2..4") {
  HSICube cube = random_cube(3, 3, 2, 3);
  Tensor out = shift_cube(cube.data, 2);
  REQUIRE(out.dim(1) == 5);
  for (int h = 0; h < 3; ++h) {
    CHECK(out.at(h, 0, 1) == 0.0);
    CHECK(out.at(h, 1, 1) == 0.0);
    for (int w = 0; w < 3; ++w) CHECK(out.at(h, w + 2, 1) == cube.at(h, w, 1));
    CHECK(out.at(h, 3, 0) == 0.0);
    CHECK(out.at(h, 4, 0) == 0.0);
  }
}

TEST_CASE("unshift inverts shift; shift∘unshift projects onto the support") {
  HSICube cube = random_cube(4, 4, 3, 4);
  for (int step : {0, 1, 2}) {
    Tensor rt = unshift_cube(shift_cube(cube.data, step), step);
    CHECK(tensor_max_abs_diff(rt, cube.data) == 0.0);
  }
  // projection: out-of-support entries of a random shifted-domain tensor die
  Rng rng(5);
  Tensor z({4, 4 + 2 * 2, 3});
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = rng.uniform();
  Tensor proj = shift_cube(unshift_cube(z, 2), 2);
  for (int h = 0; h < 4; ++h)
    for (int m = 0; m < 8; ++m)
      for (int c = 0; c < 3; ++c) {
        const bool in_support = m >= 2 * c && m < 2 * c + 4;
        if (in_support)
          CHECK(proj.at(h, m, c) == z.at(h, m, c));
        else
          CHECK(proj.at(h, m, c) == 0.0);
      }
}

TEST_CASE("negative step is an argument error") {
  HSICube cube = random_cube(4, 4, 2, 6);
  CHECK_THROWS_AS(shift_cube(cube.data, -1), std::invalid_argument);
}

TEST_CASE("forward with C=1 all-ones mask returns the band") {
  CodedMask mask{4, 5, Tensor({4, 5}, 1.0)};
  OperatorRep op = OperatorRep::from_mask(mask, 1, 0);
  HSICube cube = random_cube(4, 5, 1, 7);
  Measurement y = apply_forward(cube, op);
  CHECK(tensor_max_abs_diff(y.data, Tensor({4, 5})) > 0.0);
  for (int h = 0; h < 4; ++h)
    for (int w = 0; w < 5; ++w) CHECK(y.data.at(h, w) == cube.at(h, w, 0));
}

TEST_CASE("zero cube maps to zero measurement") {
  CodedMask mask = random_mask(6, 6, 8);
  OperatorRep op = OperatorRep::from_mask(mask, 4, 2);
  HSICube zero = HSICube::zeros(6, 6, 4);
  Measurement y = apply_forward(zero, op);
  CHECK(tensor_max(y.data) == 0.0);
  CHECK(tensor_min(y.data) == 0.0);
}

TEST_CASE("adjoint of C=1 ones mask at step 0 is the identity") {
  CodedMask mask{3, 4, Tensor({3, 4}, 1.0)};
  OperatorRep op = OperatorRep::from_mask(mask, 1, 0);
  Measurement y = random_meas(op, 9);
  HSICube x = apply_adjoint(y, op);
  for (int h = 0; h < 3; ++h)
    for (int w = 0; w < 4; ++w) CHECK(x.at(h, w, 0) == y.data.at(h, w));
}

TEST_CASE("adjoint identity holds over 100 random instances") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed + 1000);
    const int h = 2 + static_cast<int>(rng.uniform_int(15));
    const int w = 2 + static_cast<int>(rng.uniform_int(15));
    const int c = 1 + static_cast<int>(rng.uniform_int(8));
    const int step = static_cast<int>(rng.uniform_int(3));
    CodedMask mask = random_mask(h, w, seed * 3 + 1, seed % 2 == 0);
    OperatorRep op = OperatorRep::from_mask(mask, c, step);
    HSICube x = random_cube(h, w, c, seed * 3 + 2);
    Measurement y = random_meas(op, seed * 3 + 3);
    Measurement ax = apply_forward(x, op);
    HSICube aty = apply_adjoint(y, op);
    const double lhs = tensor_dot(ax.data, y.data);
    const double rhs = tensor_dot(x.data, aty.data);
    const double scale =
        std::sqrt(tensor_sq_norm(ax.data)) * std::sqrt(tensor_sq_norm(y.data));
    CHECK(std::fabs(lhs - rhs) <= 1e-5 * std::max(scale, 1e-12));
  }
}

TEST_CASE("dense oracle matches forward, adjoint, and structure") {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    Rng rng(seed + 77);
    const int h = 3 + static_cast<int>(rng.uniform_int(6));
    const int w = 3 + static_cast<int>(rng.uniform_int(6));
    const int c = 1 + static_cast<int>(rng.uniform_int(4));
    const int step = static_cast<int>(rng.uniform_int(3));
    CodedMask mask = random_mask(h, w, seed + 5, false);
    OperatorRep op = OperatorRep::from_mask(mask, c, step);
    auto dense = build_dense_operator(op);
    HSICube x = random_cube(h, w, c, seed + 6);
    Measurement y = random_meas(op, seed + 7);

    Measurement fwd = apply_forward(x, op);
    Measurement fwd_dense = dense_forward(dense, x, op);
    CHECK(tensor_max_abs_diff(fwd.data, fwd_dense.data) < 1e-6);

    HSICube adj = apply_adjoint(y, op);
    HSICube adj_dense = dense_adjoint(dense, y, op);
    CHECK(tensor_max_abs_diff(adj.data, adj_dense.data) < 1e-6);

    // every column has at most one nonzero: each voxel hits one sensor pixel
    const std::size_t rows = static_cast<std::size_t>(h) * op.meas_width;
    const std::size_t cols = x.data.size();
    for (std::size_t col = 0; col < cols; ++col) {
      int nz = 0;
      for (std::size_t r = 0; r < rows; ++r)
        if (dense[r * cols + col] != 0.0) ++nz;
      CHECK(nz <= 1);
    }
    // row sums match the accumulated mask values per sensor pixel
    for (std::size_t r = 0; r < rows; ++r) {
      double sum = 0.0;
      for (std::size_t col = 0; col < cols; ++col) sum += dense[r * cols + col];
      double direct = 0.0;
      const int hh = static_cast<int>(r) / op.meas_width;
      const int mm = static_cast<int>(r) % op.meas_width;
      for (int cc = 0; cc < c; ++cc) direct += op.shifted_mask.at(hh, mm, cc);
      CHECK(std::fabs(sum - direct) < 1e-12);
    }
  }
}

TEST_CASE("ones mask, C=1, step 0 gives an identity-pattern dense matrix") {
  CodedMask mask{3, 3, Tensor({3, 3}, 1.0)};
  OperatorRep op = OperatorRep::from_mask(mask, 1, 0);
  auto dense = build_dense_operator(op);
  for (int r = 0; r < 9; ++r)
    for (int c = 0; c < 9; ++c)
      CHECK(dense[static_cast<std::size_t>(r) * 9 + c] == (r == c ? 1.0 : 0.0));
}

TEST_CASE("dense oracle refuses above the voxel cap") {
  CodedMask mask{64, 64, Tensor({64, 64}, 1.0)};
  OperatorRep op = OperatorRep::from_mask(mask, 28, 2);
  CHECK_THROWS_AS(build_dense_operator(op), std::length_error);
}

TEST_CASE("linearity of the forward operator") {
  CodedMask mask = random_mask(6, 7, 31, false);
  OperatorRep op = OperatorRep::from_mask(mask, 3, 2);
  HSICube x = random_cube(6, 7, 3, 32);
  HSICube z = random_cube(6, 7, 3, 33);
  const double a = 0.7, b = -1.3;
  HSICube combo = x;
  for (std::size_t i = 0; i < combo.data.size(); ++i)
    combo.data[i] = a * x.data[i] + b * z.data[i];
  Measurement lhs = apply_forward(combo, op);
  Measurement fx = apply_forward(x, op);
  Measurement fz = apply_forward(z, op);
  for (std::size_t i = 0; i < lhs.data.size(); ++i)
    CHECK(std::fabs(lhs.data[i] - (a * fx.data[i] + b * fz.data[i])) < 1e-6);
}

TEST_CASE("row squared norms equal the dense operator's") {
  CodedMask mask = random_mask(5, 6, 41, false);
  OperatorRep op = OperatorRep::from_mask(mask, 4, 1);
  auto dense = build_dense_operator(op);
  Tensor diag = operator_row_sq_norms(op);
  const std::size_t rows = diag.size();
  const std::size_t cols = static_cast<std::size_t>(5) * 6 * 4;
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      double v = dense[r * cols + c];
      acc += v * v;
    }
    CHECK(std::fabs(acc - diag[r]) < 1e-12);
  }
}

TEST_CASE("shot noise: zero stays zero, seeds reproduce") {
  CodedMask mask = random_mask(4, 4, 51);
  OperatorRep op = OperatorRep::from_mask(mask, 2, 1);
  Measurement zero{4, op.meas_width, Tensor({4, op.meas_width}), std::nullopt};
  Measurement nz = add_shot_noise(zero, 11, 5);
  CHECK(tensor_max(nz.data) == 0.0);
  REQUIRE(nz.noise_meta.has_value());
  CHECK(nz.noise_meta->bits == 11);

  Measurement y{4, op.meas_width, Tensor({4, op.meas_width}, 0.5), std::nullopt};
  Measurement n1 = add_shot_noise(y, 11, 123);
  Measurement n2 = add_shot_noise(y, 11, 123);
  CHECK(tensor_max_abs_diff(n1.data, n2.data) == 0.0);
  Measurement n3 = add_shot_noise(y, 11, 124);
  CHECK(tensor_max_abs_diff(n1.data, n3.data) > 0.0);
}

TEST_CASE("shot noise rejects negative input") {
  Measurement y{2, 2, Tensor({2, 2}, -0.1), std::nullopt};
  CHECK_THROWS_AS(add_shot_noise(y, 11, 0), std::invalid_argument);
}

TEST_CASE("shot noise preserves the mean within 1 percent") {
  Measurement y{10, 10, Tensor({10, 10}, 0.5), std::nullopt};
  double acc = 0.0;
  const int draws = 10000 / 100;  // 100 pixels per draw -> 1e4 samples
  for (int d = 0; d < draws; ++d) {
    Measurement n = add_shot_noise(y, 11, static_cast<std::uint64_t>(d));
    for (std::size_t i = 0; i < n.data.size(); ++i) acc += n.data[i];
  }
  const double mean = acc / (draws * 100.0);
  CHECK(std::fabs(mean - 0.5) < 0.005);
}
