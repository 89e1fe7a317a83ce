#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace msaunet {

using Rgb = std::array<std::uint8_t, 3>;

// 8-bit raster, interleaved. Palette PNGs read with keep_indices hold one
// index per pixel plus the palette.
struct RasterImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;  // 1 or 3
  bool indexed = false;
  std::vector<std::uint8_t> pixels;
  std::vector<Rgb> palette;

  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const {
    return pixels[(y * width + x) * channels + c];
  }
};

// PNG or JPEG, chosen by content. Alpha is dropped and 16-bit samples are
// reduced to 8 bits. Palette images expand to RGB unless keep_indices is set.
RasterImage read_image(const std::filesystem::path& path, bool keep_indices = false);

// Writes an 8-bit PNG: grayscale, RGB, or palette when image.indexed.
void write_png(const std::filesystem::path& path, const RasterImage& image);

// Standard VOC colour map (bit-interleaved class index).
std::vector<Rgb> voc_palette(std::size_t entries = 256);

}  // namespace msaunet
