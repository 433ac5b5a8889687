// SPDX-License-Identifier: Apache-2.0
#include "cassi/hsi_data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <vector>

#include "cassi/rng.hpp"

namespace cassi {

namespace {

constexpr char kMagic[4] = {'H', 'S', 'I', 'C'};
constexpr std::uint8_t kVersion = 1;
constexpr std::uint8_t kDtypeF32 = 1;
constexpr std::uint32_t kFlagMeasurement = 1u;
constexpr std::uint64_t kMaxElements = 1ull << 28;

void put_u32le(std::uint8_t* p, std::uint32_t v) {
  p[0] = static_cast<std::uint8_t>(v & 0xff);
  p[1] = static_cast<std::uint8_t>((v >> 8) & 0xff);
  p[2] = static_cast<std::uint8_t>((v >> 16) & 0xff);
  p[3] = static_cast<std::uint8_t>((v >> 24) & 0xff);
}

std::uint32_t get_u32le(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) |
         (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

void write_hsic(const std::string& path, const Tensor& t, std::uint32_t h,
                std::uint32_t w, std::uint32_t c, std::uint32_t flags) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("cannot open for writing: " + path);
  std::uint8_t header[24] = {};
  std::memcpy(header, kMagic, 4);
  header[4] = kVersion;
  header[5] = kDtypeF32;
  put_u32le(header + 8, h);
  put_u32le(header + 12, w);
  put_u32le(header + 16, c);
  put_u32le(header + 20, flags);
  f.write(reinterpret_cast<const char*>(header), sizeof(header));
  std::vector<std::uint8_t> buf(t.size() * 4);
  for (std::size_t i = 0; i < t.size(); ++i) {
    float v = static_cast<float>(t[i]);
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32le(buf.data() + 4 * i, bits);
  }
  f.write(reinterpret_cast<const char*>(buf.data()),
          static_cast<std::streamsize>(buf.size()));
  if (!f) throw FormatError("short write: " + path);
}

struct HsicRecord {
  std::uint32_t h, w, c, flags;
  Tensor payload;  // shape {h, w, c}
};

HsicRecord read_hsic(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open: " + path);
  std::uint8_t header[24];
  f.read(reinterpret_cast<char*>(header), sizeof(header));
  if (f.gcount() != sizeof(header)) throw FormatError("truncated header");
  if (std::memcmp(header, kMagic, 4) != 0) throw FormatError("bad magic");
  if (header[4] != kVersion) throw FormatError("unsupported version");
  if (header[5] != kDtypeF32) throw FormatError("unsupported dtype code");
  if (header[6] != 0 || header[7] != 0)
    throw FormatError("reserved bytes not zero");
  HsicRecord rec;
  rec.h = get_u32le(header + 8);
  rec.w = get_u32le(header + 12);
  rec.c = get_u32le(header + 16);
  rec.flags = get_u32le(header + 20);
  if (rec.h == 0 || rec.w == 0 || rec.c == 0)
    throw FormatError("zero dimension");
  std::uint64_t n = static_cast<std::uint64_t>(rec.h) * rec.w * rec.c;
  if (n > kMaxElements) throw FormatError("dimension overflow");
  std::vector<std::uint8_t> buf(n * 4);
  f.read(reinterpret_cast<char*>(buf.data()),
         static_cast<std::streamsize>(buf.size()));
  if (static_cast<std::uint64_t>(f.gcount()) != buf.size())
    throw FormatError("truncated payload");
  f.peek();
  if (!f.eof()) throw FormatError("trailing bytes after payload");
  rec.payload = Tensor({static_cast<int>(rec.h), static_cast<int>(rec.w),
                        static_cast<int>(rec.c)});
  for (std::size_t i = 0; i < rec.payload.size(); ++i) {
    std::uint32_t bits = get_u32le(buf.data() + 4 * i);
    float v;
    std::memcpy(&v, &bits, 4);
    rec.payload[i] = static_cast<double>(v);
  }
  return rec;
}

double quantize_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace

void save_cube(const HSICube& cube, const std::string& path) {
  write_hsic(path, cube.data, static_cast<std::uint32_t>(cube.height),
             static_cast<std::uint32_t>(cube.width),
             static_cast<std::uint32_t>(cube.bands), 0);
}

HSICube load_cube(const std::string& path) {
  HsicRecord rec = read_hsic(path);
  if (rec.flags & kFlagMeasurement)
    throw FormatError("file is a measurement, not a cube");
  HSICube cube{static_cast<int>(rec.h), static_cast<int>(rec.w),
               static_cast<int>(rec.c), std::move(rec.payload)};
  return cube;
}

void save_mask(const CodedMask& mask, const std::string& path) {
  Tensor t({mask.height, mask.width, 1});
  for (std::size_t i = 0; i < mask.data.size(); ++i) t[i] = mask.data[i];
  write_hsic(path, t, static_cast<std::uint32_t>(mask.height),
             static_cast<std::uint32_t>(mask.width), 1, 0);
}

CodedMask load_mask(const std::string& path) {
  HsicRecord rec = read_hsic(path);
  if (rec.flags & kFlagMeasurement)
    throw FormatError("file is a measurement, not a mask");
  if (rec.c != 1) throw FormatError("mask must have a single band");
  CodedMask mask{static_cast<int>(rec.h), static_cast<int>(rec.w),
                 Tensor({static_cast<int>(rec.h), static_cast<int>(rec.w)})};
  for (std::size_t i = 0; i < mask.data.size(); ++i)
    mask.data[i] = rec.payload[i];
  return mask;
}

void save_measurement(const Measurement& meas, const std::string& path) {
  Tensor t({meas.height, meas.width, 1});
  for (std::size_t i = 0; i < meas.data.size(); ++i) t[i] = meas.data[i];
  write_hsic(path, t, static_cast<std::uint32_t>(meas.height),
             static_cast<std::uint32_t>(meas.width), 1, kFlagMeasurement);
}

Measurement load_measurement(const std::string& path) {
  HsicRecord rec = read_hsic(path);
  if (!(rec.flags & kFlagMeasurement))
    throw FormatError("file is not flagged as a measurement");
  if (rec.c != 1) throw FormatError("measurement must have a single band");
  Measurement meas{static_cast<int>(rec.h), static_cast<int>(rec.w),
                   Tensor({static_cast<int>(rec.h), static_cast<int>(rec.w)}),
                   std::nullopt};
  for (std::size_t i = 0; i < meas.data.size(); ++i)
    meas.data[i] = rec.payload[i];
  return meas;
}

HSICube generate_synthetic_scene(int height, int width, int bands,
                                 std::uint64_t seed) {
  if (height < 8 || width < 8 || bands < 1)
    throw std::invalid_argument("generate_synthetic_scene: need H,W >= 8, C >= 1");
  Rng rng(hash_combine(seed, 0x5CE17EULL));
  const double c_span = static_cast<double>(bands);

  struct Profile {
    int n = 0;
    double mu[3], sigma[3], w[3];
    double eval(double c) const {
      double v = 0.0;
      for (int j = 0; j < n; ++j) {
        double d = (c - mu[j]) / sigma[j];
        v += w[j] * std::exp(-0.5 * d * d);
      }
      return v;
    }
  };
  auto draw_profile = [&](Rng& r) {
    Profile p;
    p.n = 1 + static_cast<int>(r.uniform_int(2));
    double sig_lo = std::max(1.5, c_span / 8.0);
    double sig_hi = std::max(sig_lo + 0.5, c_span / 3.0);
    for (int j = 0; j < p.n; ++j) {
      p.mu[j] = r.uniform(-0.1 * c_span, 1.1 * c_span);
      p.sigma[j] = r.uniform(sig_lo, sig_hi);
      p.w[j] = r.uniform(0.2, 1.0);
    }
    return p;
  };

  struct Blob {
    double cx, cy, rad, amp;
    Profile prof;
  };
  int nblobs = 6 + static_cast<int>(rng.uniform_int(7));
  std::vector<Blob> blobs(static_cast<std::size_t>(nblobs));
  for (auto& b : blobs) {
    b.cx = rng.uniform(0.0, static_cast<double>(width));
    b.cy = rng.uniform(0.0, static_cast<double>(height));
    b.rad = rng.uniform(0.10, 0.35) * std::min(height, width);
    b.amp = rng.uniform(0.3, 1.0);
    b.prof = draw_profile(rng);
  }
  Profile bg = draw_profile(rng);

  HSICube cube = HSICube::zeros(height, width, bands);
  double vmax = 0.0;
  for (int h = 0; h < height; ++h) {
    for (int w = 0; w < width; ++w) {
      for (int c = 0; c < bands; ++c) {
        double v = 0.15 * bg.eval(c);
        for (const auto& b : blobs) {
          double dx = w - b.cx, dy = h - b.cy;
          double sp = std::exp(-0.5 * (dx * dx + dy * dy) / (b.rad * b.rad));
          v += b.amp * sp * b.prof.eval(c);
        }
        cube.at(h, w, c) = v;
        vmax = std::max(vmax, v);
      }
    }
  }
  double scale = vmax > 0.0 ? 0.96 / vmax : 0.0;
  for (std::size_t i = 0; i < cube.data.size(); ++i)
    cube.data[i] = quantize_f32(0.02 + scale * cube.data[i]);
  return cube;
}

CodedMask generate_random_mask(int height, int width, std::uint64_t seed,
                               MaskKind kind) {
  if (height < 1 || width < 1)
    throw std::invalid_argument("generate_random_mask: nonpositive dims");
  Rng rng(hash_combine(seed, 0x3A5BULL));
  CodedMask mask{height, width, Tensor({height, width})};
  for (std::size_t i = 0; i < mask.data.size(); ++i) {
    double v = kind == MaskKind::Binary ? (rng.bernoulli(0.5) ? 1.0 : 0.0)
                                        : rng.uniform();
    mask.data[i] = quantize_f32(v);
  }
  return mask;
}

HSICube random_crop(const HSICube& cube, int size_h, int size_w,
                    std::uint64_t seed) {
  if (size_h < 1 || size_w < 1)
    throw std::invalid_argument("random_crop: nonpositive size");
  if (size_h > cube.height || size_w > cube.width)
    throw std::invalid_argument("random_crop: crop larger than source");
  Rng rng(hash_combine(seed, 0xC409ULL));
  int oh = static_cast<int>(rng.uniform_int(
      static_cast<std::uint64_t>(cube.height - size_h + 1)));
  int ow = static_cast<int>(rng.uniform_int(
      static_cast<std::uint64_t>(cube.width - size_w + 1)));
  HSICube out = HSICube::zeros(size_h, size_w, cube.bands);
  for (int h = 0; h < size_h; ++h)
    for (int w = 0; w < size_w; ++w)
      for (int c = 0; c < cube.bands; ++c)
        out.at(h, w, c) = cube.at(h + oh, w + ow, c);
  return out;
}

HSICube apply_augment(const HSICube& cube, AugmentOp op) {
  const int H = cube.height, W = cube.width, C = cube.bands;
  auto make = [&](int h, int w) { return HSICube::zeros(h, w, C); };
  HSICube out;
  switch (op) {
    case AugmentOp::Identity:
      return cube;
    case AugmentOp::FlipH:
      out = make(H, W);
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w)
          for (int c = 0; c < C; ++c) out.at(h, w, c) = cube.at(h, W - 1 - w, c);
      return out;
    case AugmentOp::FlipV:
      out = make(H, W);
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w)
          for (int c = 0; c < C; ++c) out.at(h, w, c) = cube.at(H - 1 - h, w, c);
      return out;
    case AugmentOp::Rot90:  // quarter turn clockwise; dims swap
      out = make(W, H);
      for (int h = 0; h < W; ++h)
        for (int w = 0; w < H; ++w)
          for (int c = 0; c < C; ++c) out.at(h, w, c) = cube.at(H - 1 - w, h, c);
      return out;
    case AugmentOp::Rot180:
      out = make(H, W);
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w)
          for (int c = 0; c < C; ++c)
            out.at(h, w, c) = cube.at(H - 1 - h, W - 1 - w, c);
      return out;
    case AugmentOp::Rot270:
      out = make(W, H);
      for (int h = 0; h < W; ++h)
        for (int w = 0; w < H; ++w)
          for (int c = 0; c < C; ++c) out.at(h, w, c) = cube.at(w, W - 1 - h, c);
      return out;
  }
  throw std::invalid_argument("apply_augment: unknown op");
}

HSICube augment(const HSICube& cube, std::uint64_t seed) {
  Rng rng(hash_combine(seed, 0xA06ULL));
  return apply_augment(cube, static_cast<AugmentOp>(rng.uniform_int(6)));
}

}  // namespace cassi
