// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

#include "cassi/tensor.hpp"

namespace cassi {

// Raised on malformed HSIC files (bad magic, truncated payload, bogus dims).
class FormatError : public std::runtime_error {
public:
  explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

// H x W x C spectral datacube, values in [0,1]. Stored row-major (h, w, c),
// matching the on-disk payload order.
struct HSICube {
  int height = 0;
  int width = 0;
  int bands = 0;
  Tensor data;  // shape {H, W, C}

  static HSICube zeros(int h, int w, int c) {
    return HSICube{h, w, c, Tensor({h, w, c})};
  }
  double& at(int h, int w, int c) { return data.at(h, w, c); }
  double at(int h, int w, int c) const { return data.at(h, w, c); }
};

// H x W coded aperture with values in [0,1].
struct CodedMask {
  int height = 0;
  int width = 0;
  Tensor data;  // shape {H, W}
};

struct NoiseMeta {
  int bits = 0;
  std::uint64_t seed = 0;
};

// H x (W + step*(C-1)) sensor image.
struct Measurement {
  int height = 0;
  int width = 0;
  Tensor data;  // shape {H, W}
  std::optional<NoiseMeta> noise_meta;
};

// HSIC container I/O. Layout: magic "HSIC", version 1, dtype 1 (f32 LE),
// two reserved zero bytes, u32le dims H/W/C, u32le flags (bit 0 =
// is_measurement), then H*W*C little-endian floats in (h, w, c) order.
void save_cube(const HSICube& cube, const std::string& path);
HSICube load_cube(const std::string& path);
void save_mask(const CodedMask& mask, const std::string& path);
CodedMask load_mask(const std::string& path);
void save_measurement(const Measurement& meas, const std::string& path);
Measurement load_measurement(const std::string& path);

// Deterministic synthetic scene: smooth Gaussian band profiles over random
// spatial blobs, values f32-quantized so file round-trips are bit-exact.
HSICube generate_synthetic_scene(int height, int width, int bands,
                                 std::uint64_t seed);

enum class MaskKind { Binary, Uniform };
CodedMask generate_random_mask(int height, int width, std::uint64_t seed,
                               MaskKind kind = MaskKind::Binary);

HSICube random_crop(const HSICube& cube, int size_h, int size_w,
                    std::uint64_t seed);

enum class AugmentOp : int {
  Identity = 0,
  FlipH = 1,
  FlipV = 2,
  Rot90 = 3,
  Rot180 = 4,
  Rot270 = 5,
};

HSICube apply_augment(const HSICube& cube, AugmentOp op);
// Picks one of the six ops uniformly from the seed.
HSICube augment(const HSICube& cube, std::uint64_t seed);

}  // namespace cassi
