#pragma once

#include "unirgbir/config.hpp"
#include "unirgbir/params.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace unirgbir {

/// On-disk checkpoint: a directory holding `manifest.json` (tensor names,
/// shapes, offsets, frozen flags, config snapshot, seed) and `weights.bin`
/// (contiguous little-endian f32 data). The round trip is bitwise lossless.
struct CheckpointData {
  struct Entry {
    std::string name;
    std::vector<int> shape;
    int64_t offset = 0;  // bytes into weights.bin
    bool frozen = false;
    bool stat = false;
  };
  RunConfig config;
  uint64_t seed = 0;
  std::string mode;  // arch mode string
  std::vector<Entry> entries;
  std::map<std::string, Tensor<float>> tensors;
};

void save_checkpoint(const ParamStore<float>& store, const RunConfig& cfg, const std::string& mode,
                     uint64_t seed, const std::string& dir);

/// Reads manifest + blob. Throws distinct errors for a corrupt manifest,
/// a truncated blob, or inconsistent offsets.
CheckpointData load_checkpoint(const std::string& dir);

/// Copies checkpoint tensors into an existing store. Every store parameter
/// must appear in the checkpoint ("missing tensor"), every checkpoint
/// tensor in the store ("unknown tensor"), shapes must match exactly
/// (error names the tensor). Frozen flags are reproduced bit-for-bit.
void load_into_store(const CheckpointData& ckpt, ParamStore<float>& store);

}  // namespace unirgbir
