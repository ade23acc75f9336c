#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace unirgbir {

/// 8-bit image buffer, row-major, channels interleaved (1 or 3).
struct Image8 {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<uint8_t> pixels;
};

void write_png_rgb8(const std::string& path, const Image8& img);
void write_png_gray8(const std::string& path, const Image8& img);

/// Palette PNG of class ids (one byte per pixel, palette has n_classes
/// entries). Reading returns the raw indices.
void write_png_palette(const std::string& path, const Image8& img, int n_classes);

/// Reads any supported PNG into gray8/rgb8/palette-index form.
Image8 read_png(const std::string& path);

}  // namespace unirgbir
