#pragma once

#include "unirgbir/tensor.hpp"

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace unirgbir {

/// Aligned RGB + IR pair, intensities in [0, 1], H and W divisible by 32 so
/// the feature pyramid reaches 1/32 scale cleanly.
struct ImagePair {
  Tensor<float> rgb;  // [H, W, 3]
  Tensor<float> ir;   // [H, W, 1]
  int height = 0;
  int width = 0;

  void validate() const {
    if (rgb.rank() != 3 || rgb.dim(2) != 3) throw std::invalid_argument("ImagePair: rgb must be HxWx3");
    if (ir.rank() != 3 || ir.dim(2) != 1) throw std::invalid_argument("ImagePair: ir must be HxWx1");
    if (rgb.dim(0) != height || rgb.dim(1) != width || ir.dim(0) != height || ir.dim(1) != width)
      throw std::invalid_argument("ImagePair: rgb and ir must share H and W");
    if (height % 32 != 0 || width % 32 != 0)
      throw std::invalid_argument("ImagePair: H and W must be divisible by 32");
    for (float v : rgb.data)
      if (!(v >= 0.0f && v <= 1.0f)) throw std::invalid_argument("ImagePair: rgb value outside [0,1]");
    for (float v : ir.data)
      if (!(v >= 0.0f && v <= 1.0f)) throw std::invalid_argument("ImagePair: ir value outside [0,1]");
  }
};

/// A token sequence with its 2-D spatial shape. Flattening is row-major
/// over (row, col).
template <typename T>
struct TokenMap {
  Tensor<T> tokens;  // [n, D]
  int grid_h = 0;
  int grid_w = 0;

  int n() const { return grid_h * grid_w; }
  int dim() const { return tokens.dim(1); }

  void validate() const {
    if (tokens.rank() != 2) throw std::invalid_argument("TokenMap: tokens must be n x D");
    if (tokens.dim(0) != grid_h * grid_w) throw std::invalid_argument("TokenMap: n != grid_h * grid_w");
  }

  /// [grid_h, grid_w, D] view of the tokens.
  Tensor<T> unflatten() const {
    return tokens.reshaped({grid_h, grid_w, dim()});
  }

  static TokenMap flatten(const Tensor<T>& map) {
    if (map.rank() != 3) throw std::invalid_argument("TokenMap: map must be H x W x D");
    TokenMap t;
    t.grid_h = map.dim(0);
    t.grid_w = map.dim(1);
    t.tokens = map.reshaped({map.dim(0) * map.dim(1), map.dim(2)});
    return t;
  }
};

/// Concatenated flattened pyramid tokens with per-level boundaries, ordered
/// coarse-list order: 1/8 first, then 1/16, then 1/32.
template <typename T>
struct MultiScaleTokens {
  Tensor<T> tokens;  // [n_total, D]
  std::vector<std::pair<int, int>> levels;  // (grid_h, grid_w) per level
  std::vector<int> level_offsets;           // start row of each level

  int n_total() const { return tokens.dim(0); }
  int dim() const { return tokens.dim(1); }

  void validate() const {
    if (levels.size() != level_offsets.size()) throw std::invalid_argument("MultiScaleTokens: offsets mismatch");
    int expect = 0;
    for (size_t l = 0; l < levels.size(); ++l) {
      if (level_offsets[l] != expect) throw std::invalid_argument("MultiScaleTokens: bad level offset");
      expect += levels[l].first * levels[l].second;
    }
    if (expect != tokens.dim(0)) throw std::invalid_argument("MultiScaleTokens: token count mismatch");
  }
};

/// Expected token count of the three-level pyramid for an H x W input.
inline int64_t pyramid_token_count(int h, int w) {
  return (int64_t)(h / 8) * (w / 8) + (int64_t)(h / 16) * (w / 16) + (int64_t)(h / 32) * (w / 32);
}

/// One synthetic segmentation sample. Mask classes: 0 background,
/// 1 rgb-only object, 2 ir-only object, 3 both-modal object.
struct SegSample {
  ImagePair pair;
  std::vector<uint8_t> mask;  // H*W, row-major

  static constexpr int kClasses = 4;
  static constexpr uint8_t kBackground = 0;
  static constexpr uint8_t kRgbOnly = 1;
  static constexpr uint8_t kIrOnly = 2;
  static constexpr uint8_t kBothModal = 3;

  void validate() const {
    pair.validate();
    if ((int64_t)mask.size() != (int64_t)pair.height * pair.width)
      throw std::invalid_argument("SegSample: mask size mismatch");
    for (uint8_t m : mask)
      if (m >= kClasses) throw std::invalid_argument("SegSample: mask class out of range");
  }
};

}  // namespace unirgbir
