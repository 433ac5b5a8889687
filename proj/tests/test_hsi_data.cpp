// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "cassi/hsi_data.hpp"
#include "cassi/rng.hpp"

using namespace cassi;

namespace {

std::string temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "cassi_hsi_tests";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

HSICube random_f32_cube(int h, int w, int c, std::uint64_t seed) {
  Rng rng(seed);
  HSICube cube = HSICube::zeros(h, w, c);
  for (std::size_t i = 0; i < cube.data.size(); ++i)
    cube.data[i] = static_cast<double>(static_cast<float>(rng.uniform()));
  return cube;
}

std::vector<double> band_multiset(const HSICube& cube, int band) {
  std::vector<double> v;
  for (int h = 0; h < cube.height; ++h)
    for (int w = 0; w < cube.width; ++w) v.push_back(cube.at(h, w, band));
  std::sort(v.begin(), v.end());
  return v;
}

}  // namespace

TEST_CASE("save/load round trip is bit exact") {
  HSICube cube = random_f32_cube(4, 4, 3, 42);
  const std::string path = temp_path("roundtrip.hsic");
  save_cube(cube, path);
  HSICube back = load_cube(path);
  REQUIRE(back.height == 4);
  REQUIRE(back.width == 4);
  REQUIRE(back.bands == 3);
  for (std::size_t i = 0; i < cube.data.size(); ++i)
    CHECK(back.data[i] == cube.data[i]);
}

TEST_CASE("round trip property over random cubes") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng dims(seed * 13 + 1);
    int h = 1 + static_cast<int>(dims.uniform_int(12));
    int w = 1 + static_cast<int>(dims.uniform_int(12));
    int c = 1 + static_cast<int>(dims.uniform_int(6));
    HSICube cube = random_f32_cube(h, w, c, seed);
    const std::string path = temp_path("prop.hsic");
    save_cube(cube, path);
    HSICube back = load_cube(path);
    bool equal = back.data.same_shape(cube.data);
    for (std::size_t i = 0; equal && i < cube.data.size(); ++i)
      equal = back.data[i] == cube.data[i];
    CHECK(equal);
  }
}

TEST_CASE("bad magic is a format error") {
  const std::string path = temp_path("badmagic.hsic");
  {
    std::ofstream f(path, std::ios::binary);
    const char bytes[24] = {'N', 'O', 'P', 'E'};
    f.write(bytes, sizeof(bytes));
  }
  CHECK_THROWS_AS(load_cube(path), FormatError);
}

TEST_CASE("truncated payload is a format error") {
  HSICube cube = random_f32_cube(4, 4, 2, 3);
  const std::string path = temp_path("trunc.hsic");
  save_cube(cube, path);
  std::filesystem::resize_file(path, 24 + 4 * 4 * 2 * 4 - 5);
  CHECK_THROWS_AS(load_cube(path), FormatError);
}

TEST_CASE("payload size is header plus 4 bytes per value") {
  HSICube cube = HSICube::zeros(256, 256, 28);
  const std::string path = temp_path("size.hsic");
  save_cube(cube, path);
  CHECK(std::filesystem::file_size(path) ==
        24u + 4ull * 256 * 256 * 28);
}

TEST_CASE("measurement flag round trips and is enforced") {
  Measurement m{5, 9, Tensor({5, 9}), std::nullopt};
  for (std::size_t i = 0; i < m.data.size(); ++i)
    m.data[i] = static_cast<double>(static_cast<float>(0.1 * i));
  const std::string path = temp_path("meas.hsic");
  save_measurement(m, path);
  Measurement back = load_measurement(path);
  CHECK(back.height == 5);
  CHECK(back.width == 9);
  CHECK(tensor_max_abs_diff(back.data, m.data) == 0.0);
  CHECK_THROWS_AS(load_cube(path), FormatError);
}

TEST_CASE("synthetic scenes are deterministic and in range") {
  HSICube a = generate_synthetic_scene(32, 24, 28, 7);
  HSICube b = generate_synthetic_scene(32, 24, 28, 7);
  CHECK(tensor_max_abs_diff(a.data, b.data) == 0.0);
  CHECK(tensor_min(a.data) >= 0.0);
  CHECK(tensor_max(a.data) <= 1.0);
  HSICube c = generate_synthetic_scene(32, 24, 28, 8);
  CHECK(tensor_max_abs_diff(a.data, c.data) > 0.0);
}

TEST_CASE("scene spectra are smooth: mean second difference under 0.2") {
  double acc = 0.0;
  std::size_t count = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    HSICube cube = generate_synthetic_scene(16, 16, 28, seed);
    for (int h = 0; h < cube.height; ++h)
      for (int w = 0; w < cube.width; ++w)
        for (int c = 1; c + 1 < cube.bands; ++c) {
          acc += std::fabs(cube.at(h, w, c + 1) - 2.0 * cube.at(h, w, c) +
                           cube.at(h, w, c - 1));
          ++count;
        }
  }
  CHECK(acc / static_cast<double>(count) < 0.2);
}

TEST_CASE("scene generation rejects bad dims") {
  CHECK_THROWS_AS(generate_synthetic_scene(4, 16, 3, 0), std::invalid_argument);
  CHECK_THROWS_AS(generate_synthetic_scene(16, 16, 0, 0), std::invalid_argument);
}

TEST_CASE("random crop size and bounds") {
  HSICube scene = generate_synthetic_scene(64, 64, 4, 5);
  HSICube patch = random_crop(scene, 16, 16, 3);
  CHECK(patch.height == 16);
  CHECK(patch.width == 16);
  CHECK(patch.bands == 4);
  CHECK_THROWS_AS(random_crop(scene, 65, 16, 3), std::invalid_argument);
}

TEST_CASE("augment identity leaves the cube unchanged") {
  HSICube cube = random_f32_cube(8, 8, 3, 11);
  HSICube out = apply_augment(cube, AugmentOp::Identity);
  CHECK(tensor_max_abs_diff(out.data, cube.data) == 0.0);
}

TEST_CASE("rotate-180 is an involution") {
  HSICube cube = random_f32_cube(7, 9, 3, 12);
  HSICube out = apply_augment(apply_augment(cube, AugmentOp::Rot180), AugmentOp::Rot180);
  CHECK(tensor_max_abs_diff(out.data, cube.data) == 0.0);
}

TEST_CASE("rot90 four times is identity and swaps dims once") {
  HSICube cube = random_f32_cube(6, 10, 2, 13);
  HSICube r1 = apply_augment(cube, AugmentOp::Rot90);
  CHECK(r1.height == 10);
  CHECK(r1.width == 6);
  HSICube r4 = apply_augment(
      apply_augment(apply_augment(r1, AugmentOp::Rot90), AugmentOp::Rot90),
      AugmentOp::Rot90);
  CHECK(tensor_max_abs_diff(r4.data, cube.data) == 0.0);
  HSICube r90_270 = apply_augment(r1, AugmentOp::Rot270);
  CHECK(tensor_max_abs_diff(r90_270.data, cube.data) == 0.0);
}

TEST_CASE("every augmentation preserves the per-band multiset") {
  HSICube cube = random_f32_cube(9, 9, 4, 21);
  for (int op = 0; op < 6; ++op) {
    HSICube out = apply_augment(cube, static_cast<AugmentOp>(op));
    for (int c = 0; c < cube.bands; ++c) {
      auto a = band_multiset(cube, c);
      auto b = band_multiset(out, c);
      CHECK(a == b);
    }
  }
}

TEST_CASE("crop of the paper's patch size") {
  HSICube scene = generate_synthetic_scene(512, 512, 4, 17);
  HSICube patch = random_crop(scene, 256, 256, 9);
  CHECK(patch.height == 256);
  CHECK(patch.width == 256);
  CHECK(patch.bands == 4);
}

TEST_CASE("masks draw binary by default, uniform on request") {
  CodedMask bin = generate_random_mask(16, 16, 4, MaskKind::Binary);
  for (std::size_t i = 0; i < bin.data.size(); ++i)
    CHECK((bin.data[i] == 0.0 || bin.data[i] == 1.0));
  CodedMask uni = generate_random_mask(16, 16, 4, MaskKind::Uniform);
  bool non_binary = false;
  for (std::size_t i = 0; i < uni.data.size(); ++i)
    if (uni.data[i] != 0.0 && uni.data[i] != 1.0) non_binary = true;
  CHECK(non_binary);
  CHECK(tensor_min(uni.data) >= 0.0);
  CHECK(tensor_max(uni.data) <= 1.0);
}
