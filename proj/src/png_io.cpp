// SPDX-License-Identifier: Apache-2.0
#include "cassi/png_io.hpp"

#include <array>
#include <fstream>
#include <stdexcept>

namespace cassi {

namespace {

std::array<std::uint32_t, 256> make_crc_table() {
  std::array<std::uint32_t, 256> t{};
  for (std::uint32_t n = 0; n < 256; ++n) {
    std::uint32_t c = n;
    for (int k = 0; k < 8; ++k)
      c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
    t[n] = c;
  }
  return t;
}

std::uint32_t crc32(const std::uint8_t* data, std::size_t len) {
  static const auto table = make_crc_table();
  std::uint32_t c = 0xFFFFFFFFu;
  for (std::size_t i = 0; i < len; ++i)
    c = table[(c ^ data[i]) & 0xFF] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

std::uint32_t adler32(const std::uint8_t* data, std::size_t len) {
  std::uint32_t a = 1, b = 0;
  for (std::size_t i = 0; i < len; ++i) {
    a = (a + data[i]) % 65521u;
    b = (b + a) % 65521u;
  }
  return (b << 16) | a;
}

void put_u32be(std::vector<std::uint8_t>& v, std::uint32_t x) {
  v.push_back(static_cast<std::uint8_t>((x >> 24) & 0xff));
  v.push_back(static_cast<std::uint8_t>((x >> 16) & 0xff));
  v.push_back(static_cast<std::uint8_t>((x >> 8) & 0xff));
  v.push_back(static_cast<std::uint8_t>(x & 0xff));
}

void write_chunk(std::ofstream& f, const char type[4],
                 const std::vector<std::uint8_t>& data) {
  std::vector<std::uint8_t> out;
  put_u32be(out, static_cast<std::uint32_t>(data.size()));
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  std::uint32_t crc = crc32(out.data() + 4, out.size() - 4);
  put_u32be(out, crc);
  f.write(reinterpret_cast<const char*>(out.data()),
          static_cast<std::streamsize>(out.size()));
}

void write_png(const std::string& path, int width, int height,
               const std::vector<std::uint8_t>& pixels, int channels) {
  if (width < 1 || height < 1)
    throw std::invalid_argument("write_png: empty image");
  if (pixels.size() != static_cast<std::size_t>(width) * height * channels)
    throw std::invalid_argument("write_png: pixel buffer size mismatch");
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("write_png: cannot open " + path);
  static const std::uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  f.write(reinterpret_cast<const char*>(sig), 8);

  std::vector<std::uint8_t> ihdr;
  put_u32be(ihdr, static_cast<std::uint32_t>(width));
  put_u32be(ihdr, static_cast<std::uint32_t>(height));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(channels == 1 ? 0 : 2);
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  write_chunk(f, "IHDR", ihdr);

  // Raw scanlines with filter byte 0.
  std::vector<std::uint8_t> raw;
  const std::size_t stride = static_cast<std::size_t>(width) * channels;
  raw.reserve(static_cast<std::size_t>(height) * (stride + 1));
  for (int y = 0; y < height; ++y) {
    raw.push_back(0);
    const std::uint8_t* row = pixels.data() + static_cast<std::size_t>(y) * stride;
    raw.insert(raw.end(), row, row + stride);
  }

  std::vector<std::uint8_t> idat;
  idat.push_back(0x78);
  idat.push_back(0x01);
  std::size_t off = 0;
  while (off < raw.size()) {
    const std::size_t len = std::min<std::size_t>(65535, raw.size() - off);
    const bool final = off + len == raw.size();
    idat.push_back(final ? 1 : 0);
    idat.push_back(static_cast<std::uint8_t>(len & 0xff));
    idat.push_back(static_cast<std::uint8_t>((len >> 8) & 0xff));
    idat.push_back(static_cast<std::uint8_t>(~len & 0xff));
    idat.push_back(static_cast<std::uint8_t>((~len >> 8) & 0xff));
    idat.insert(idat.end(), raw.begin() + static_cast<std::ptrdiff_t>(off),
                raw.begin() + static_cast<std::ptrdiff_t>(off + len));
    off += len;
  }
  put_u32be(idat, adler32(raw.data(), raw.size()));
  write_chunk(f, "IDAT", idat);
  write_chunk(f, "IEND", {});
  if (!f) throw std::runtime_error("write_png: short write");
}

}  // namespace

void write_png_gray(const std::string& path, int width, int height,
                    const std::vector<std::uint8_t>& pixels) {
  write_png(path, width, height, pixels, 1);
}

void write_png_rgb(const std::string& path, int width, int height,
                   const std::vector<std::uint8_t>& pixels) {
  write_png(path, width, height, pixels, 3);
}

}  // namespace cassi
