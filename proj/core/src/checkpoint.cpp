#include "unirgbir/checkpoint.hpp"

#include <json.hpp>

#include <cstring>
#include <filesystem>
#include <fstream>

namespace unirgbir {

namespace fs = std::filesystem;
using nlohmann::json;

void save_checkpoint(const ParamStore<float>& store, const RunConfig& cfg, const std::string& mode,
                     uint64_t seed, const std::string& dir) {
  fs::create_directories(dir);
  json manifest;
  manifest["format"] = "unirgbir-checkpoint";
  manifest["version"] = 1;
  manifest["seed"] = seed;
  manifest["mode"] = mode;
  manifest["config"] = to_key_values(cfg);

  std::ofstream blob(fs::path(dir) / "weights.bin", std::ios::binary);
  if (!blob) throw std::runtime_error("cannot write weights.bin in " + dir);
  json tensors = json::array();
  int64_t offset = 0;
  for (const auto& p : store) {
    json e;
    e["name"] = p.name;
    e["shape"] = p.value.shape;
    e["dtype"] = "f32";
    e["offset"] = offset;
    e["frozen"] = p.frozen;
    e["stat"] = p.stat;
    tensors.push_back(e);
    blob.write(reinterpret_cast<const char*>(p.value.ptr()),
               (std::streamsize)(p.value.numel() * (int64_t)sizeof(float)));
    offset += p.value.numel() * (int64_t)sizeof(float);
  }
  manifest["tensors"] = tensors;
  if (!blob) throw std::runtime_error("short write to weights.bin in " + dir);
  blob.close();

  std::ofstream mf(fs::path(dir) / "manifest.json");
  if (!mf) throw std::runtime_error("cannot write manifest.json in " + dir);
  mf << manifest.dump(2) << "\n";
}

CheckpointData load_checkpoint(const std::string& dir) {
  const fs::path mpath = fs::path(dir) / "manifest.json";
  std::ifstream mf(mpath);
  if (!mf) throw std::runtime_error("checkpoint manifest not found: " + mpath.string());
  json manifest;
  try {
    mf >> manifest;
  } catch (const json::exception& e) {
    throw std::runtime_error("corrupt manifest: " + mpath.string() + " (" + e.what() + ")");
  }

  CheckpointData out;
  try {
    if (manifest.at("format") != "unirgbir-checkpoint")
      throw std::runtime_error("corrupt manifest: unexpected format field");
    out.seed = manifest.at("seed").get<uint64_t>();
    out.mode = manifest.value("mode", "");
    std::string cfg_text;
    for (const auto& [k, v] : manifest.at("config").get<std::map<std::string, std::string>>())
      cfg_text += k + " = " + v + "\n";
    out.config = parse_run_config(cfg_text);
    for (const auto& t : manifest.at("tensors")) {
      CheckpointData::Entry e;
      e.name = t.at("name").get<std::string>();
      e.shape = t.at("shape").get<std::vector<int>>();
      e.offset = t.at("offset").get<int64_t>();
      e.frozen = t.at("frozen").get<bool>();
      e.stat = t.value("stat", false);
      if (t.at("dtype") != "f32") throw std::runtime_error("corrupt manifest: unsupported dtype");
      out.entries.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw std::runtime_error("corrupt manifest: " + mpath.string() + " (" + e.what() + ")");
  }

  const fs::path bpath = fs::path(dir) / "weights.bin";
  std::ifstream blob(bpath, std::ios::binary);
  if (!blob) throw std::runtime_error("checkpoint blob not found: " + bpath.string());
  blob.seekg(0, std::ios::end);
  const int64_t blob_size = (int64_t)blob.tellg();

  for (const auto& e : out.entries) {
    Tensor<float> t(e.shape);
    const int64_t bytes = t.numel() * (int64_t)sizeof(float);
    if (e.offset < 0 || e.offset + bytes > blob_size)
      throw std::runtime_error("corrupt checkpoint: tensor " + e.name + " extends past blob end");
    blob.seekg(e.offset);
    blob.read(reinterpret_cast<char*>(t.ptr()), (std::streamsize)bytes);
    if (!blob) throw std::runtime_error("corrupt checkpoint: short read for tensor " + e.name);
    out.tensors.emplace(e.name, std::move(t));
  }
  return out;
}

void load_into_store(const CheckpointData& ckpt, ParamStore<float>& store) {
  for (const auto& e : ckpt.entries)
    if (!store.find(e.name))
      throw std::runtime_error("unknown tensor in checkpoint: " + e.name);
  for (auto& p : store) {
    auto it = ckpt.tensors.find(p.name);
    if (it == ckpt.tensors.end()) throw std::runtime_error("missing tensor: " + p.name);
    if (!(it->second.shape == p.value.shape))
      throw std::runtime_error("shape mismatch for tensor " + p.name + ": checkpoint " +
                               it->second.shape_str() + " vs model " + p.value.shape_str());
    p.value = it->second;
  }
  for (const auto& e : ckpt.entries) {
    Param<float>& p = store.at(e.name);
    p.frozen = e.frozen;
    p.stat = e.stat;
  }
}

}  // namespace unirgbir
