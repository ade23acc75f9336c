#pragma once

#include "unirgbir/tensor.hpp"

#include <string>
#include <vector>

namespace unirgbir {

/// One exported intermediate array: raw little-endian f32 file plus a
/// manifest row carrying name, stage tag, shape and dtype.
struct ExportEntry {
  std::string name;
  int stage = 0;
  std::vector<int> shape;
  std::string file;
};

struct ExportBundle {
  std::vector<ExportEntry> entries;
  std::vector<Tensor<float>> arrays;
};

/// Writes `manifest.json` plus one `<name>_s<stage>.bin` per array.
void write_feature_export(const ExportBundle& bundle, const std::string& dir);

/// Lossless read-back of an export directory.
ExportBundle read_feature_export(const std::string& dir);

}  // namespace unirgbir
