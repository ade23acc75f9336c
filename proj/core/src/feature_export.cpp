#include "unirgbir/feature_export.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>

namespace unirgbir {

namespace fs = std::filesystem;
using nlohmann::json;

void write_feature_export(const ExportBundle& bundle, const std::string& dir) {
  if (bundle.entries.size() != bundle.arrays.size())
    throw std::invalid_argument("feature export: entry/array count mismatch");
  fs::create_directories(dir);
  json manifest = json::array();
  for (size_t i = 0; i < bundle.entries.size(); ++i) {
    ExportEntry e = bundle.entries[i];
    if (e.file.empty()) e.file = e.name + "_s" + std::to_string(e.stage) + ".bin";
    const Tensor<float>& t = bundle.arrays[i];
    std::ofstream out(fs::path(dir) / e.file, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write export file: " + e.file);
    out.write(reinterpret_cast<const char*>(t.ptr()), (std::streamsize)(t.numel() * (int64_t)sizeof(float)));
    if (!out) throw std::runtime_error("short write to export file: " + e.file);
    json row;
    row["name"] = e.name;
    row["stage"] = e.stage;
    row["shape"] = t.shape;
    row["dtype"] = "f32";
    row["file"] = e.file;
    manifest.push_back(row);
  }
  std::ofstream mf(fs::path(dir) / "manifest.json");
  if (!mf) throw std::runtime_error("cannot write export manifest in " + dir);
  mf << manifest.dump(2) << "\n";
}

ExportBundle read_feature_export(const std::string& dir) {
  std::ifstream mf(fs::path(dir) / "manifest.json");
  if (!mf) throw std::runtime_error("export manifest not found in " + dir);
  json manifest;
  try {
    mf >> manifest;
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("corrupt export manifest: ") + e.what());
  }
  ExportBundle out;
  for (const auto& row : manifest) {
    ExportEntry e;
    e.name = row.at("name").get<std::string>();
    e.stage = row.at("stage").get<int>();
    e.shape = row.at("shape").get<std::vector<int>>();
    e.file = row.at("file").get<std::string>();
    Tensor<float> t(e.shape);
    std::ifstream in(fs::path(dir) / e.file, std::ios::binary);
    if (!in) throw std::runtime_error("export file missing: " + e.file);
    in.read(reinterpret_cast<char*>(t.ptr()), (std::streamsize)(t.numel() * (int64_t)sizeof(float)));
    if (!in) throw std::runtime_error("export file truncated: " + e.file);
    out.entries.push_back(std::move(e));
    out.arrays.push_back(std::move(t));
  }
  return out;
}

}  // namespace unirgbir
