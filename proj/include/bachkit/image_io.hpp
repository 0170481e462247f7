#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "bachkit/tensor.hpp"

namespace bachkit {

/// 8-bit raster with 1 (indexed/gray) or 3 (RGB) interleaved channels.
struct Image8 {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 1;
  std::vector<std::uint8_t> pixels;

  friend bool operator==(const Image8&, const Image8&) = default;
};

/// Reads .png (8-bit gray or palette indices, or RGB) or binary .pgm (P5).
Image8 read_image(const std::filesystem::path& path);
/// Writes .png, or .pgm/.ppm by extension.
void write_image(const std::filesystem::path& path, const Image8& image);
std::vector<std::uint8_t> encode_png(const Image8& image);

/// H×W×3 tensor in [-1, 1] to 8-bit RGB, round((v + 1) * 127.5) clamped.
Image8 image_from_tensor(const Tensor& rgb);

}  // namespace bachkit
