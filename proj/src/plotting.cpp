// SPDX-License-Identifier: Apache-2.0
#include "cassi/plotting.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "cassi/png_io.hpp"

namespace cassi {

namespace {

std::uint8_t to_byte(double v) {
  v = std::min(1.0, std::max(0.0, v));
  return static_cast<std::uint8_t>(std::lround(v * 255.0));
}

// 5x7 glyphs for the correlation annotation ("r=-0.123456789").
const char* glyph(char ch) {
  switch (ch) {
    case '0': return "01110100011001110101110011000101110";
    case '1': return "00100011000010000100001000010001110";
    case '2': return "01110100010000100110010001000011111";
    case '3': return "01110100010000101110000011000101110";
    case '4': return "00010001100101010010111110001000010";
    case '5': return "11111100001111000001000011000101110";
    case '6': return "01110100001000011110100011000101110";
    case '7': return "11111000010001000100010000100001000";
    case '8': return "01110100011000101110100011000101110";
    case '9': return "01110100011000101111000010000101110";
    case '.': return "00000000000000000000000000110001100";
    case '-': return "00000000000000011111000000000000000";
    case '=': return "00000000001111100000111110000000000";
    case 'r': return "00000000001011011100100001000010000";
    default:  return "00000000000000000000000000000000000";
  }
}

void draw_text(std::vector<std::uint8_t>& rgb, int width, int height,
               int x0, int y0, const std::string& text) {
  int x = x0;
  for (char ch : text) {
    const char* g = glyph(ch);
    for (int r = 0; r < 7; ++r)
      for (int c = 0; c < 5; ++c)
        if (g[r * 5 + c] == '1') {
          int px = x + c, py = y0 + r;
          if (px >= 0 && px < width && py >= 0 && py < height) {
            std::size_t i = 3 * (static_cast<std::size_t>(py) * width + px);
            rgb[i] = rgb[i + 1] = rgb[i + 2] = 0;
          }
        }
    x += 6;
  }
}

}  // namespace

void plot_band_grid(const HSICube& cube, const std::vector<int>& bands,
                    const std::string& path) {
  if (bands.empty()) throw std::invalid_argument("plot_band_grid: no bands");
  for (int b : bands)
    if (b < 0 || b >= cube.bands)
      throw std::invalid_argument("plot_band_grid: band index out of range");
  const int gap = 2;
  const int n = static_cast<int>(bands.size());
  const int W = n * cube.width + (n - 1) * gap;
  const int H = cube.height;
  std::vector<std::uint8_t> px(static_cast<std::size_t>(W) * H, 255);
  for (int i = 0; i < n; ++i) {
    const int off = i * (cube.width + gap);
    for (int y = 0; y < cube.height; ++y)
      for (int x = 0; x < cube.width; ++x)
        px[static_cast<std::size_t>(y) * W + off + x] =
            to_byte(cube.at(y, x, bands[static_cast<std::size_t>(i)]));
  }
  write_png_gray(path, W, H, px);
}

void plot_normalized_map(const Tensor& map2d, const std::string& path) {
  if (map2d.ndim() != 2) throw std::invalid_argument("plot_normalized_map: need 2D");
  const int H = map2d.dim(0), W = map2d.dim(1);
  const double lo = tensor_min(map2d), hi = tensor_max(map2d);
  const double scale = hi > lo ? 1.0 / (hi - lo) : 0.0;
  std::vector<std::uint8_t> px(static_cast<std::size_t>(W) * H);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      px[static_cast<std::size_t>(y) * W + x] =
          to_byte((map2d.at(y, x) - lo) * scale);
  write_png_gray(path, W, H, px);
}

void plot_spectral_curves(const std::vector<double>& pred_means,
                          const std::vector<double>& truth_means,
                          double correlation, const std::string& path) {
  if (pred_means.size() != truth_means.size() || pred_means.empty())
    throw std::invalid_argument("plot_spectral_curves: bad curve sizes");
  const int W = 288, H = 192, margin = 12;
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(W) * H * 3, 255);

  double lo = pred_means[0], hi = pred_means[0];
  for (double v : pred_means) { lo = std::min(lo, v); hi = std::max(hi, v); }
  for (double v : truth_means) { lo = std::min(lo, v); hi = std::max(hi, v); }
  if (hi - lo < 1e-12) hi = lo + 1e-12;

  auto set_px = [&](int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    if (x < 0 || x >= W || y < 0 || y >= H) return;
    std::size_t i = 3 * (static_cast<std::size_t>(y) * W + x);
    rgb[i] = r; rgb[i + 1] = g; rgb[i + 2] = b;
  };
  // axes
  for (int x = margin; x < W - margin; ++x) set_px(x, H - margin, 160, 160, 160);
  for (int y = margin; y < H - margin; ++y) set_px(margin, y, 160, 160, 160);

  const int n = static_cast<int>(pred_means.size());
  auto to_xy = [&](int i, double v) {
    double fx = n > 1 ? static_cast<double>(i) / (n - 1) : 0.0;
    double fy = (v - lo) / (hi - lo);
    int x = margin + static_cast<int>(std::lround(fx * (W - 2 * margin - 1)));
    int y = H - margin - 1 -
            static_cast<int>(std::lround(fy * (H - 2 * margin - 1)));
    return std::pair<int, int>(x, y);
  };
  auto draw_line = [&](int x0, int y0, int x1, int y1, std::uint8_t r,
                       std::uint8_t g, std::uint8_t b) {
    int steps = std::max(std::abs(x1 - x0), std::abs(y1 - y0));
    for (int s = 0; s <= steps; ++s) {
      double t = steps > 0 ? static_cast<double>(s) / steps : 0.0;
      set_px(static_cast<int>(std::lround(x0 + t * (x1 - x0))),
             static_cast<int>(std::lround(y0 + t * (y1 - y0))), r, g, b);
    }
  };
  for (int i = 0; i + 1 < n; ++i) {
    auto [x0, y0] = to_xy(i, truth_means[static_cast<std::size_t>(i)]);
    auto [x1, y1] = to_xy(i + 1, truth_means[static_cast<std::size_t>(i + 1)]);
    draw_line(x0, y0, x1, y1, 120, 180, 120);
    auto [px0, py0] = to_xy(i, pred_means[static_cast<std::size_t>(i)]);
    auto [px1, py1] = to_xy(i + 1, pred_means[static_cast<std::size_t>(i + 1)]);
    draw_line(px0, py0, px1, py1, 30, 30, 30);
  }
  char label[32];
  std::snprintf(label, sizeof(label), "r=%.6f", correlation);
  draw_text(rgb, W, H, margin + 6, margin, label);
  write_png_rgb(path, W, H, rgb);
}

}  // namespace cassi
