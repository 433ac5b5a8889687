// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cassi {

// Minimal PNG encoder (8-bit gray or RGB, zlib stored blocks). Output bytes
// are a pure function of the pixel data, which keeps plot emission
// deterministic.
void write_png_gray(const std::string& path, int width, int height,
                    const std::vector<std::uint8_t>& pixels);
void write_png_rgb(const std::string& path, int width, int height,
                   const std::vector<std::uint8_t>& pixels);

}  // namespace cassi
