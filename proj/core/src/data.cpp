#include "unirgbir/data.hpp"

#include "unirgbir/png_io.hpp"
#include "unirgbir/rng.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace unirgbir {

namespace fs = std::filesystem;

namespace {

constexpr float kMinClassFrac = 0.01f;
constexpr float kMaxClassFrac = 0.20f;
constexpr float kIrContrastMin = 0.32f;
constexpr float kIrContrastMax = 0.45f;
constexpr float kRgbContrastMin = 0.22f;
constexpr float kRgbContrastMax = 0.38f;

struct Shape {
  bool ellipse;
  int cx, cy, rx, ry;
};

void paint(std::vector<uint8_t>& mask, int H, int W, const Shape& s, uint8_t cls) {
  for (int y = std::max(0, s.cy - s.ry); y <= std::min(H - 1, s.cy + s.ry); ++y)
    for (int x = std::max(0, s.cx - s.rx); x <= std::min(W - 1, s.cx + s.rx); ++x) {
      if (s.ellipse) {
        const double dx = (double)(x - s.cx) / s.rx, dy = (double)(y - s.cy) / s.ry;
        if (dx * dx + dy * dy > 1.0) continue;
      }
      mask[(size_t)y * W + x] = cls;
    }
}

float quantize8(float v) {
  v = std::clamp(v, 0.0f, 1.0f);
  return std::round(v * 255.0f) / 255.0f;
}

/// Per-channel contrast with a random sign, kept inside [0.02, 0.98].
float offset_channel(Rng& rng, float base, float lo, float hi) {
  const float mag = (float)rng.uniform(lo, hi);
  float v = rng.coin() ? base + mag : base - mag;
  if (v > 0.98f) v = base - mag;
  if (v < 0.02f) v = base + mag;
  return v;
}

SegSample generate_sample(Rng& rng, int H, int W, float noise_sigma) {
  SegSample s;
  s.pair.height = H;
  s.pair.width = W;

  const float bg_r = (float)rng.uniform(0.30, 0.55);
  const float bg_g = (float)rng.uniform(0.30, 0.55);
  const float bg_b = (float)rng.uniform(0.30, 0.55);
  const float bg_ir = (float)rng.uniform(0.32, 0.50);

  // per-class appearance; class 2 keeps the exact background RGB
  float cls_rgb[4][3] = {{bg_r, bg_g, bg_b}, {0, 0, 0}, {bg_r, bg_g, bg_b}, {0, 0, 0}};
  float cls_ir[4] = {bg_ir, bg_ir, 0, 0};
  for (int c : {1, 3}) {
    cls_rgb[c][0] = offset_channel(rng, bg_r, kRgbContrastMin, kRgbContrastMax);
    cls_rgb[c][1] = offset_channel(rng, bg_g, kRgbContrastMin, kRgbContrastMax);
    cls_rgb[c][2] = offset_channel(rng, bg_b, kRgbContrastMin, kRgbContrastMax);
  }
  for (int c : {2, 3}) cls_ir[c] = bg_ir + (float)rng.uniform(kIrContrastMin, kIrContrastMax);

  // place 1..4 shapes per object class; resample until every class covers
  // 1%..20% of the pixels (overlaps are overwritten in class order)
  const int min_r = std::max(3, H / 12), max_r = std::max(min_r + 1, H / 5);
  for (int attempt = 0; attempt < 200; ++attempt) {
    s.mask.assign((size_t)H * W, SegSample::kBackground);
    for (uint8_t cls = 1; cls <= 3; ++cls) {
      const int count = rng.uniform_int(1, 4);
      for (int i = 0; i < count; ++i) {
        Shape sh;
        sh.ellipse = rng.coin();
        sh.rx = rng.uniform_int(min_r, max_r);
        sh.ry = rng.uniform_int(min_r, max_r);
        sh.cx = rng.uniform_int(sh.rx, W - 1 - sh.rx);
        sh.cy = rng.uniform_int(sh.ry, H - 1 - sh.ry);
        paint(s.mask, H, W, sh, cls);
      }
    }
    int64_t counts[4] = {0, 0, 0, 0};
    for (uint8_t m : s.mask) ++counts[m];
    const int64_t px = (int64_t)H * W;
    bool ok = true;
    for (int c = 1; c <= 3; ++c) {
      const float frac = (float)counts[c] / (float)px;
      if (frac < kMinClassFrac || frac > kMaxClassFrac) ok = false;
    }
    if (ok) break;
    if (attempt == 199) throw std::runtime_error("dataset generator: class balance unreachable");
  }

  s.pair.rgb = Tensor<float>({H, W, 3});
  s.pair.ir = Tensor<float>({H, W, 1});
  for (int64_t p = 0; p < (int64_t)H * W; ++p) {
    const uint8_t cls = s.mask[(size_t)p];
    for (int ch = 0; ch < 3; ++ch)
      s.pair.rgb[p * 3 + ch] = quantize8(cls_rgb[cls][ch] + (float)(rng.normal() * noise_sigma));
    s.pair.ir[p] = quantize8(cls_ir[cls] + (float)(rng.normal() * noise_sigma));
  }
  return s;
}

std::string sample_id(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d", i);
  return buf;
}

}  // namespace

Dataset generate_dataset(const GenParams& params) {
  if (params.height % 32 != 0 || params.width % 32 != 0)
    throw std::invalid_argument("generate_dataset: dims must be divisible by 32");
  if (params.n_samples < 0) throw std::invalid_argument("generate_dataset: negative sample count");
  Dataset ds;
  ds.height = params.height;
  ds.width = params.width;
  Rng rng(params.seed);
  for (int i = 0; i < params.n_samples; ++i) {
    ds.samples.push_back(generate_sample(rng, params.height, params.width, params.noise_sigma));
    ds.samples.back().validate();
  }
  return ds;
}

void write_dataset(const Dataset& ds, const std::string& dir) {
  fs::create_directories(dir);
  std::ofstream index(fs::path(dir) / "index.txt");
  if (!index) throw std::runtime_error("cannot write index.txt in " + dir);
  index << ds.height << " " << ds.width << "\n";
  for (int i = 0; i < (int)ds.samples.size(); ++i) {
    const std::string id = sample_id(i);
    index << id << "\n";
    const SegSample& s = ds.samples[(size_t)i];
    Image8 rgb{ds.height, ds.width, 3, {}};
    rgb.pixels.resize((size_t)ds.height * ds.width * 3);
    for (size_t p = 0; p < rgb.pixels.size(); ++p)
      rgb.pixels[p] = (uint8_t)std::lround(s.pair.rgb[(int64_t)p] * 255.0f);
    write_png_rgb8((fs::path(dir) / ("rgb_" + id + ".png")).string(), rgb);

    Image8 ir{ds.height, ds.width, 1, {}};
    ir.pixels.resize((size_t)ds.height * ds.width);
    for (size_t p = 0; p < ir.pixels.size(); ++p)
      ir.pixels[p] = (uint8_t)std::lround(s.pair.ir[(int64_t)p] * 255.0f);
    write_png_gray8((fs::path(dir) / ("ir_" + id + ".png")).string(), ir);

    Image8 mask{ds.height, ds.width, 1, {}};
    mask.pixels.assign(s.mask.begin(), s.mask.end());
    write_png_palette((fs::path(dir) / ("mask_" + id + ".png")).string(), mask, SegSample::kClasses);
  }
}

Dataset read_dataset(const std::string& dir) {
  std::ifstream index(fs::path(dir) / "index.txt");
  if (!index) throw std::runtime_error("dataset index not found in " + dir);
  Dataset ds;
  std::string header;
  if (!std::getline(index, header)) throw std::runtime_error("dataset index empty in " + dir);
  {
    std::istringstream hs(header);
    if (!(hs >> ds.height >> ds.width)) throw std::runtime_error("dataset index header malformed in " + dir);
  }
  std::string id;
  while (std::getline(index, id)) {
    if (id.empty()) continue;
    SegSample s;
    s.pair.height = ds.height;
    s.pair.width = ds.width;

    const std::string rgb_path = (fs::path(dir) / ("rgb_" + id + ".png")).string();
    const std::string ir_path = (fs::path(dir) / ("ir_" + id + ".png")).string();
    const std::string mask_path = (fs::path(dir) / ("mask_" + id + ".png")).string();
    for (const auto& p : {rgb_path, ir_path, mask_path})
      if (!fs::exists(p)) throw std::runtime_error("sample " + id + ": missing file " + p);

    const Image8 rgb = read_png(rgb_path);
    if (rgb.height != ds.height || rgb.width != ds.width || rgb.channels != 3)
      throw std::runtime_error("sample " + id + ": rgb image has wrong geometry");
    s.pair.rgb = Tensor<float>({ds.height, ds.width, 3});
    for (size_t p = 0; p < rgb.pixels.size(); ++p) s.pair.rgb[(int64_t)p] = rgb.pixels[p] / 255.0f;

    const Image8 ir = read_png(ir_path);
    if (ir.height != ds.height || ir.width != ds.width || ir.channels != 1)
      throw std::runtime_error("sample " + id + ": ir image has wrong geometry");
    s.pair.ir = Tensor<float>({ds.height, ds.width, 1});
    for (size_t p = 0; p < ir.pixels.size(); ++p) s.pair.ir[(int64_t)p] = ir.pixels[p] / 255.0f;

    const Image8 mask = read_png(mask_path);
    if (mask.height != ds.height || mask.width != ds.width || mask.channels != 1)
      throw std::runtime_error("sample " + id + ": mask image has wrong geometry");
    s.mask.assign(mask.pixels.begin(), mask.pixels.end());
    for (uint8_t m : s.mask)
      if (m >= SegSample::kClasses)
        throw std::runtime_error("sample " + id + ": mask class out of range");
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

std::pair<Dataset, Dataset> split_train_val(const Dataset& ds) {
  Dataset train, val;
  train.height = val.height = ds.height;
  train.width = val.width = ds.width;
  const size_t n_train = ds.samples.size() * 8 / 10;
  for (size_t i = 0; i < ds.samples.size(); ++i)
    (i < n_train ? train : val).samples.push_back(ds.samples[i]);
  return {std::move(train), std::move(val)};
}

}  // namespace unirgbir
