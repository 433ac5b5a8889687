// SPDX-License-Identifier: Apache-2.0
#include "cassi/nn.hpp"

#include <cmath>

namespace cassi::nn {

Conv2d::Conv2d(ParamStore& store, const std::string& name, int in_ch,
               int out_ch, int ksize, int grp, Rng& rng, bool zero_init,
               bool with_bias)
    : groups(grp) {
  Tensor wt({out_ch, in_ch / grp, ksize, ksize});
  const double bound =
      std::sqrt(1.0 / ((in_ch / grp) * ksize * ksize));
  if (!zero_init)
    for (std::size_t i = 0; i < wt.size(); ++i)
      wt[i] = rng.uniform(-bound, bound);
  w = store.add(name + ".weight", std::move(wt));
  if (with_bias) {
    Tensor bt({out_ch});
    if (!zero_init)
      for (std::size_t i = 0; i < bt.size(); ++i)
        bt[i] = rng.uniform(-bound, bound);
    b = store.add(name + ".bias", std::move(bt));
  }
}

ag::Var scalar_param(ParamStore& store, const std::string& name, double value) {
  return store.add(name, Tensor({1}, value));
}

}  // namespace cassi::nn
