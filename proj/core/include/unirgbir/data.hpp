#pragma once

#include "unirgbir/tensor.hpp"
#include "unirgbir/types.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace unirgbir {

/// Synthetic paired-image generator settings. Class 1 objects are visible
/// only in RGB, class 2 only in IR (zero RGB contrast by construction),
/// class 3 in both. Each class covers 1%..20% of the pixels per image.
struct GenParams {
  uint64_t seed = 0;
  int n_samples = 8;
  int height = 64;
  int width = 64;
  float noise_sigma = 0.02f;
};

struct Dataset {
  int height = 0;
  int width = 0;
  std::vector<SegSample> samples;

  size_t size() const { return samples.size(); }
};

/// Deterministic per seed; emitted intensities are already quantized to
/// 8-bit levels so the on-disk round trip is lossless.
Dataset generate_dataset(const GenParams& params);

/// Writes rgb_XXXX.png / ir_XXXX.png / mask_XXXX.png plus index.txt.
void write_dataset(const Dataset& ds, const std::string& dir);

/// Reads a dataset directory back, validating per-sample files and mask
/// class range. Missing or corrupt files name the offending sample.
Dataset read_dataset(const std::string& dir);

/// Fixed 80/20 split by sample index (first 80% train).
std::pair<Dataset, Dataset> split_train_val(const Dataset& ds);

/// Stacked batch of samples converted to the training element type.
template <typename T>
struct Batch {
  Tensor<T> rgb;            // [B, H, W, 3]
  Tensor<T> ir;             // [B, H, W, 1]
  std::vector<int> labels;  // B*H*W, row-major
};

template <typename T>
Batch<T> make_batch(const Dataset& ds, const std::vector<int>& indices) {
  if (indices.empty()) throw std::invalid_argument("make_batch: empty index list");
  const int B = (int)indices.size(), H = ds.height, W = ds.width;
  Batch<T> b;
  b.rgb = Tensor<T>({B, H, W, 3});
  b.ir = Tensor<T>({B, H, W, 1});
  b.labels.resize((size_t)B * H * W);
  for (int i = 0; i < B; ++i) {
    const SegSample& s = ds.samples[(size_t)indices[(size_t)i]];
    for (int64_t j = 0; j < (int64_t)H * W * 3; ++j) b.rgb[(int64_t)i * H * W * 3 + j] = (T)s.pair.rgb[j];
    for (int64_t j = 0; j < (int64_t)H * W; ++j) b.ir[(int64_t)i * H * W + j] = (T)s.pair.ir[j];
    for (int64_t j = 0; j < (int64_t)H * W; ++j) b.labels[(size_t)((int64_t)i * H * W + j)] = s.mask[(size_t)j];
  }
  return b;
}

}  // namespace unirgbir
