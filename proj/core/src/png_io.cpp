#include "unirgbir/png_io.hpp"

#include <png.h>

#include <cstdio>
#include <memory>
#include <stdexcept>

namespace unirgbir {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

void write_png(const std::string& path, const Image8& img, int color_type, int n_palette) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw std::runtime_error("cannot open for writing: " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("png write failed: " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, (png_uint_32)img.width, (png_uint_32)img.height, 8, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);

  std::vector<png_color> palette;
  if (color_type == PNG_COLOR_TYPE_PALETTE) {
    // simple distinct colors for inspection; data is the index plane
    static const png_color kColors[] = {{0, 0, 0}, {220, 60, 60}, {60, 60, 220}, {60, 200, 60},
                                        {220, 220, 60}, {200, 60, 200}, {60, 200, 200}, {160, 160, 160}};
    for (int i = 0; i < n_palette; ++i) palette.push_back(kColors[i % 8]);
    png_set_PLTE(png, info, palette.data(), n_palette);
  }
  png_write_info(png, info);

  const int row_bytes = img.width * img.channels;
  std::vector<png_bytep> rows((size_t)img.height);
  for (int y = 0; y < img.height; ++y)
    rows[(size_t)y] = const_cast<png_bytep>(img.pixels.data() + (size_t)y * row_bytes);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

void write_png_rgb8(const std::string& path, const Image8& img) {
  if (img.channels != 3) throw std::invalid_argument("write_png_rgb8: need 3 channels");
  write_png(path, img, PNG_COLOR_TYPE_RGB, 0);
}

void write_png_gray8(const std::string& path, const Image8& img) {
  if (img.channels != 1) throw std::invalid_argument("write_png_gray8: need 1 channel");
  write_png(path, img, PNG_COLOR_TYPE_GRAY, 0);
}

void write_png_palette(const std::string& path, const Image8& img, int n_classes) {
  if (img.channels != 1) throw std::invalid_argument("write_png_palette: need 1 channel");
  write_png(path, img, PNG_COLOR_TYPE_PALETTE, n_classes);
}

Image8 read_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw std::runtime_error("cannot open: " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("corrupt png: " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  const int width = (int)png_get_image_width(png, info);
  const int height = (int)png_get_image_height(png, info);
  const int color_type = png_get_color_type(png, info);
  const int bit_depth = png_get_bit_depth(png, info);

  if (bit_depth == 16) png_set_strip_16(png);
  if (bit_depth < 8) png_set_packing(png);
  // palette images stay as raw indices
  int channels;
  switch (color_type) {
    case PNG_COLOR_TYPE_GRAY:
    case PNG_COLOR_TYPE_PALETTE:
      channels = 1;
      break;
    case PNG_COLOR_TYPE_RGB:
      channels = 3;
      break;
    case PNG_COLOR_TYPE_RGB_ALPHA:
      png_set_strip_alpha(png);
      channels = 3;
      break;
    case PNG_COLOR_TYPE_GRAY_ALPHA:
      png_set_strip_alpha(png);
      channels = 1;
      break;
    default:
      png_destroy_read_struct(&png, &info, nullptr);
      throw std::runtime_error("unsupported png color type in " + path);
  }
  png_read_update_info(png, info);

  Image8 img;
  img.width = width;
  img.height = height;
  img.channels = channels;
  img.pixels.resize((size_t)width * height * channels);
  std::vector<png_bytep> rows((size_t)height);
  for (int y = 0; y < height; ++y)
    rows[(size_t)y] = img.pixels.data() + (size_t)y * width * channels;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

}  // namespace unirgbir
