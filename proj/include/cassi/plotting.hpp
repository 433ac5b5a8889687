// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "cassi/hsi_data.hpp"
#include "cassi/tensor.hpp"

namespace cassi {

// False-gray grid of the selected bands, one row of panels with 2px gaps.
// Values are clamped to [0,1] and scaled to 8 bits.
void plot_band_grid(const HSICube& cube, const std::vector<int>& bands,
                    const std::string& path);

// Single 2D map, min-max normalized per panel.
void plot_normalized_map(const Tensor& map2d, const std::string& path);

// Two per-band curves (truth gray, prediction dark) with the correlation
// coefficient rendered in the corner.
void plot_spectral_curves(const std::vector<double>& pred_means,
                          const std::vector<double>& truth_means,
                          double correlation, const std::string& path);

}  // namespace cassi
