// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "cassi/autograd.hpp"
#include "cassi/rng.hpp"

namespace cassi::nn {

// Ordered registry of named parameter leaves. Modules register their
// tensors here at construction; the optimizer and checkpoint I/O walk it.
struct ParamStore {
  std::vector<std::pair<std::string, ag::Var>> items;

  ag::Var add(const std::string& name, Tensor init) {
    items.emplace_back(name, ag::parameter(std::move(init), name));
    return items.back().second;
  }
  ag::Var find(const std::string& name) const {
    for (const auto& [n, v] : items)
      if (n == name) return v;
    return nullptr;
  }
  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& [name, v] : items) n += v->value.size();
    return n;
  }
};

// k x k convolution, stride 1, zero "same" padding. groups == in_ch gives a
// depth-wise conv. Weights use fan-in uniform init unless zero_init is set.
struct Conv2d {
  ag::Var w, b;
  int groups = 1;

  Conv2d() = default;
  Conv2d(ParamStore& store, const std::string& name, int in_ch, int out_ch,
         int ksize, int grp, Rng& rng, bool zero_init = false,
         bool with_bias = true);

  ag::Var operator()(const ag::Var& x) const { return ag::conv2d(x, w, b, groups); }
};

// Bias-free layer normalization over the channel axis, per spatial position.
struct LayerNormCh {
  ag::Var gamma;

  LayerNormCh() = default;
  LayerNormCh(ParamStore& store, const std::string& name, int channels) {
    gamma = store.add(name + ".gamma", Tensor({channels}, 1.0));
  }
  ag::Var operator()(const ag::Var& x) const { return ag::layer_norm_ch(x, gamma); }
};

ag::Var scalar_param(ParamStore& store, const std::string& name, double value);

}  // namespace cassi::nn
