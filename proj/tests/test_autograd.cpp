// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "cassi/autograd.hpp"
#include "cassi/rng.hpp"

using namespace cassi;
using ag::Var;

namespace {

Tensor random_tensor(std::vector<int> shape, std::uint64_t seed,
                     double scale = 1.0) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i)
    t[i] = scale * (rng.uniform() - 0.5) * 2.0;
  return t;
}

// Scalar objective: weighted sum of the op output, so gradients exercise
// every output element with distinct signs.
double weighted_loss_value(const Tensor& out, const Tensor& weights) {
  double acc = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) acc += out[i] * weights[i];
  return acc;
}

// Central-difference check of d loss / d inputs[arg].
void check_gradients(
    const std::function<Var(const std::vector<Var>&)>& op,
    std::vector<Tensor> inputs, double h = 1e-5, double tol = 5e-6) {
  std::vector<Var> vars;
  for (auto& t : inputs) vars.push_back(ag::parameter(t));
  Var out = op(vars);
  Tensor weights = random_tensor(out->value.shape(), 0xFEED, 1.0);
  Var loss = ag::sum(ag::mul(out, ag::constant(weights)));
  ag::backward(loss);

  for (std::size_t arg = 0; arg < vars.size(); ++arg) {
    REQUIRE(vars[arg]->grad_alloc);
    Tensor analytic = vars[arg]->grad;
    for (std::size_t i = 0; i < inputs[arg].size(); ++i) {
      const double orig = vars[arg]->value[i];
      vars[arg]->value[i] = orig + h;
      double lp = weighted_loss_value(op(vars)->value, weights);
      vars[arg]->value[i] = orig - h;
      double lm = weighted_loss_value(op(vars)->value, weights);
      vars[arg]->value[i] = orig;
      const double fd = (lp - lm) / (2.0 * h);
      const double err = std::fabs(analytic[i] - fd);
      const double denom = std::max({std::fabs(analytic[i]), std::fabs(fd), 1.0});
      CHECK(err / denom < tol);
    }
  }
}

}  // namespace

TEST_CASE("backward through add/sub/mul/affine") {
  check_gradients([](const std::vector<Var>& v) { return ag::add(v[0], v[1]); },
                  {random_tensor({3, 4}, 1), random_tensor({3, 4}, 2)});
  check_gradients([](const std::vector<Var>& v) { return ag::sub(v[0], v[1]); },
                  {random_tensor({3, 4}, 3), random_tensor({3, 4}, 4)});
  check_gradients([](const std::vector<Var>& v) { return ag::mul(v[0], v[1]); },
                  {random_tensor({3, 4}, 5), random_tensor({3, 4}, 6)});
  check_gradients(
      [](const std::vector<Var>& v) { return ag::affine(v[0], -1.7, 0.3); },
      {random_tensor({2, 5}, 7)});
}

TEST_CASE("backward through scalar scaling") {
  check_gradients(
      [](const std::vector<Var>& v) { return ag::mul_scalar(v[0], v[1]); },
      {random_tensor({2, 3, 4}, 8), Tensor({1}, 0.37)});
  check_gradients(
      [](const std::vector<Var>& v) { return ag::div_scalar(v[0], v[1]); },
      {random_tensor({2, 3}, 9), Tensor({1}, 1.21)});
}

TEST_CASE("backward through reductions and activations") {
  check_gradients([](const std::vector<Var>& v) { return ag::sum(v[0]); },
                  {random_tensor({4, 4}, 10)});
  check_gradients([](const std::vector<Var>& v) { return ag::mean(v[0]); },
                  {random_tensor({4, 4}, 11)});
  check_gradients([](const std::vector<Var>& v) { return ag::sigmoid(v[0]); },
                  {random_tensor({3, 3}, 12)});
  check_gradients([](const std::vector<Var>& v) { return ag::gelu(v[0]); },
                  {random_tensor({3, 3}, 13)});
}

TEST_CASE("backward through matmul and softmax") {
  check_gradients(
      [](const std::vector<Var>& v) { return ag::matmul(v[0], v[1]); },
      {random_tensor({3, 4}, 14), random_tensor({4, 5}, 15)});
  check_gradients(
      [](const std::vector<Var>& v) { return ag::softmax_rows(v[0]); },
      {random_tensor({4, 6}, 16)});
}

TEST_CASE("softmax rows are stochastic") {
  Var x = ag::constant(random_tensor({5, 7}, 17, 3.0));
  Var y = ag::softmax_rows(x);
  for (int r = 0; r < 5; ++r) {
    double s = 0.0;
    for (int c = 0; c < 7; ++c) s += y->value.at(r, c);
    CHECK(std::fabs(s - 1.0) < 1e-12);
  }
}

TEST_CASE("backward through conv2d variants") {
  // 1x1 pointwise
  check_gradients(
      [](const std::vector<Var>& v) { return ag::conv2d(v[0], v[1], v[2], 1); },
      {random_tensor({3, 4, 5}, 18), random_tensor({2, 3, 1, 1}, 19),
       random_tensor({2}, 20)});
  // 3x3 dense
  check_gradients(
      [](const std::vector<Var>& v) { return ag::conv2d(v[0], v[1], v[2], 1); },
      {random_tensor({2, 5, 5}, 21), random_tensor({3, 2, 3, 3}, 22),
       random_tensor({3}, 23)});
  // 3x3 depthwise
  check_gradients(
      [](const std::vector<Var>& v) { return ag::conv2d(v[0], v[1], v[2], 4); },
      {random_tensor({4, 4, 4}, 24), random_tensor({4, 1, 3, 3}, 25),
       random_tensor({4}, 26)});
  // bias-free
  check_gradients(
      [](const std::vector<Var>& v) {
        return ag::conv2d(v[0], v[1], nullptr, 1);
      },
      {random_tensor({2, 3, 3}, 27), random_tensor({2, 2, 3, 3}, 28)});
}

TEST_CASE("backward through pooling and resampling") {
  check_gradients([](const std::vector<Var>& v) { return ag::avgpool3(v[0]); },
                  {random_tensor({2, 5, 6}, 29)});
  check_gradients(
      [](const std::vector<Var>& v) { return ag::bilinear(v[0], 3, 4); },
      {random_tensor({2, 6, 8}, 30)});
  check_gradients(
      [](const std::vector<Var>& v) { return ag::bilinear(v[0], 8, 6); },
      {random_tensor({2, 4, 3}, 31)});
  check_gradients(
      [](const std::vector<Var>& v) { return ag::global_avg_pool(v[0]); },
      {random_tensor({3, 4, 5}, 32)});
}

TEST_CASE("backward through layer norm") {
  check_gradients(
      [](const std::vector<Var>& v) { return ag::layer_norm_ch(v[0], v[1]); },
      {random_tensor({6, 3, 4}, 33), random_tensor({6}, 34)},
      1e-5, 2e-5);
}

TEST_CASE("backward through broadcast multiplies") {
  check_gradients(
      [](const std::vector<Var>& v) { return ag::mul_channels(v[0], v[1]); },
      {random_tensor({3, 4, 4}, 35), random_tensor({3, 1, 1}, 36)});
  check_gradients(
      [](const std::vector<Var>& v) { return ag::mul_spatial(v[0], v[1]); },
      {random_tensor({3, 4, 4}, 37), random_tensor({1, 4, 4}, 38)});
}

TEST_CASE("backward through shape plumbing") {
  check_gradients(
      [](const std::vector<Var>& v) { return ag::reshape(v[0], {6, 4}); },
      {random_tensor({2, 3, 4}, 39)});
  check_gradients(
      [](const std::vector<Var>& v) {
        return ag::concat_ch({v[0], v[1]});
      },
      {random_tensor({2, 3, 4}, 40), random_tensor({3, 3, 4}, 41)});
  check_gradients(
      [](const std::vector<Var>& v) { return ag::slice_ch(v[0], 1, 3); },
      {random_tensor({4, 3, 3}, 42)});
  check_gradients(
      [](const std::vector<Var>& v) { return ag::chw_to_mat(v[0]); },
      {random_tensor({3, 2, 4}, 43)});
  check_gradients(
      [](const std::vector<Var>& v) { return ag::mat_to_chw(v[0], 3, 2, 4); },
      {random_tensor({8, 3}, 44)});
  check_gradients(
      [](const std::vector<Var>& v) {
        return ag::reflect_pad(v[0], 1, 2, 2, 1);
      },
      {random_tensor({2, 5, 6}, 45)});
  check_gradients(
      [](const std::vector<Var>& v) { return ag::crop(v[0], 1, 1, 2, 0); },
      {random_tensor({2, 5, 6}, 46)});
}

TEST_CASE("backward through CASSI geometry ops") {
  check_gradients(
      [](const std::vector<Var>& v) { return ag::shift_bands(v[0], 2); },
      {random_tensor({3, 4, 5}, 47)});
  check_gradients(
      [](const std::vector<Var>& v) { return ag::unshift_bands(v[0], 2); },
      {random_tensor({3, 4, 9}, 48)});
  check_gradients(
      [](const std::vector<Var>& v) { return ag::sum_channels(v[0]); },
      {random_tensor({4, 3, 4}, 49)});
  check_gradients(
      [](const std::vector<Var>& v) { return ag::repeat_channels(v[0], 5); },
      {random_tensor({1, 3, 4}, 50)});
}

TEST_CASE("backward through the Charbonnier penalty") {
  check_gradients(
      [](const std::vector<Var>& v) {
        return ag::charbonnier(v[0], v[1], 1e-3);
      },
      {random_tensor({3, 4}, 51), random_tensor({3, 4}, 52)});
}

TEST_CASE("clamp passes gradient only inside the unit interval") {
  Tensor t({5});
  t[0] = -0.5; t[1] = 0.2; t[2] = 0.8; t[3] = 1.5; t[4] = 0.5;
  Var x = ag::parameter(t);
  Var loss = ag::sum(ag::clamp01(x));
  ag::backward(loss);
  CHECK(x->grad[0] == 0.0);
  CHECK(x->grad[1] == 1.0);
  CHECK(x->grad[2] == 1.0);
  CHECK(x->grad[3] == 0.0);
  CHECK(x->grad[4] == 1.0);
}

TEST_CASE("gradients accumulate across shared subexpressions") {
  Var x = ag::parameter(Tensor({2}, 3.0));
  Var y = ag::mul(x, x);  // x^2, dy/dx = 2x
  Var loss = ag::sum(y);
  ag::backward(loss);
  CHECK(std::fabs(x->grad[0] - 6.0) < 1e-12);
  CHECK(std::fabs(x->grad[1] - 6.0) < 1e-12);
}

TEST_CASE("constants never allocate gradients") {
  Var c = ag::constant(random_tensor({3, 3}, 53));
  Var p = ag::parameter(random_tensor({3, 3}, 54));
  Var loss = ag::sum(ag::mul(c, p));
  ag::backward(loss);
  CHECK(!c->grad_alloc);
  CHECK(p->grad_alloc);
}
