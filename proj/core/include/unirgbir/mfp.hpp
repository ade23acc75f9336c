#pragma once

#include "unirgbir/config.hpp"
#include "unirgbir/nn.hpp"
#include "unirgbir/types.hpp"

#include <array>
#include <optional>

namespace unirgbir {

/// How the SE gates behave. `learned` is the real model; `identity` and
/// `pinned` exist for diagnostics (part-independence and gate-zeroing
/// checks).
enum class SeMode { learned, identity, pinned };

/// Multi-modal Feature Pool: per-modality ResNet-style stems, four-way
/// channel split with 3/3/5/7 convolutions, SE-attention fusion per part,
/// a three-step stride-2 pyramid, and flatten/concat into supplementary
/// tokens at 1/8, 1/16 and 1/32 scale.
template <typename T>
class Mfp {
 public:
  struct Output {
    int f_fus = -1;                    // [B, H/4, W/4, C]
    std::array<int, 3> level_maps{};   // [B, H/s, W/s, D] for s = 8, 16, 32
    int tokens = -1;                   // [B, n_total, D]
    std::vector<LevelSpec> levels;     // coarse-list order: 1/8 first
  };

  void init(ParamStore<T>& store, const ModelConfig& cfg, Rng& rng) {
    cfg_ = cfg;
    const int C = cfg.c, Cp = C / 4;
    stem_rgb_conv_.init(store, "mfp.stem_rgb.conv", 7, 7, 3, C, 2, 3, rng);
    stem_rgb_bn_.init(store, "mfp.stem_rgb.bn", C);
    stem_ir_conv_.init(store, "mfp.stem_ir.conv", 7, 7, 1, C, 2, 3, rng);
    stem_ir_bn_.init(store, "mfp.stem_ir.bn", C);

    static constexpr int kKernels[4] = {3, 3, 5, 7};
    for (int k = 0; k < 4; ++k) {
      Part& p = parts_[(size_t)k];
      p.ksize = kKernels[k];
      const std::string base = "mfp.part" + std::to_string(k + 1);
      p.rgb_conv.init(store, base + ".rgb_conv", p.ksize, p.ksize, Cp, Cp, 1, p.ksize / 2, rng);
      p.ir_conv.init(store, base + ".ir_conv", p.ksize, p.ksize, Cp, Cp, 1, p.ksize / 2, rng);
      const int fused_c = 2 * Cp;
      const int hidden = std::max(1, fused_c / cfg.se_reduction);
      p.se_fc1.init(store, base + ".se.fc1", fused_c, hidden, rng);
      p.se_fc2.init(store, base + ".se.fc2", hidden, fused_c, rng);
      p.proj.init(store, base + ".proj", 1, 1, fused_c, Cp, 1, 0, rng);
    }

    for (int l = 0; l < 3; ++l) {
      Pyr& py = pyr_[(size_t)l];
      const std::string base = "mfp.pyr" + std::to_string(l + 1);
      py.conv.init(store, base + ".conv", 3, 3, C, C, 2, 1, rng);
      py.bn.init(store, base + ".bn", C);
      py.proj.init(store, base + ".proj", 1, 1, C, cfg.d, 1, 0, rng);
    }
  }

  void set_se_mode(SeMode mode, Tensor<T> pinned_gates = {}) {
    se_mode_ = mode;
    pinned_gates_ = std::move(pinned_gates);
  }

  /// Both modality stems: [B, H, W, *] -> [B, H/4, W/4, C].
  std::pair<int, int> stem(Binder<T>& bind, int rgb, int ir, bool training) {
    Graph<T>& g = bind.graph();
    if (g.val(rgb).dim(1) % 4 != 0 || g.val(rgb).dim(2) % 4 != 0)
      throw std::invalid_argument("mfp stem: H and W must be divisible by 4");
    int fr = g.maxpool3x3s2(g.relu(stem_rgb_bn_.forward(bind, stem_rgb_conv_.forward(bind, rgb), training)));
    int fi = g.maxpool3x3s2(g.relu(stem_ir_bn_.forward(bind, stem_ir_conv_.forward(bind, ir), training)));
    return {fr, fi};
  }

  /// Four-way channel split, per-part multi-receptive-field convolutions,
  /// SE-attention cross-modal fusion, concat back to C channels.
  int multi_receptive_fuse(Binder<T>& bind, int f_rgb, int f_ir, bool training) {
    Graph<T>& g = bind.graph();
    const int C = cfg_.c, Cp = C / 4;
    if (g.val(f_rgb).dim(3) != C) throw std::invalid_argument("fuse: channel count mismatch");
    std::vector<int> fused;
    for (int k = 0; k < 4; ++k) {
      Part& p = parts_[(size_t)k];
      int pr = g.slice(f_rgb, 3, k * Cp, Cp);
      int pi = g.slice(f_ir, 3, k * Cp, Cp);
      pr = p.rgb_conv.forward(bind, pr);
      pi = p.ir_conv.forward(bind, pi);
      int cat = g.concat({pr, pi}, 3);  // [B, h, w, 2*Cp]
      int gated = cat;
      if (se_mode_ == SeMode::learned) {
        int gates = g.sigmoid(p.se_fc2.forward(bind, g.relu(p.se_fc1.forward(bind, g.gap2d(cat)))));
        gated = g.channel_scale(cat, gates);
      } else if (se_mode_ == SeMode::pinned) {
        const int B = g.val(cat).dim(0);
        Tensor<T> gt({B, 2 * Cp});
        for (int b = 0; b < B; ++b)
          for (int c = 0; c < 2 * Cp; ++c) gt[b * 2 * Cp + c] = pinned_gates_[c];
        gated = g.channel_scale(cat, g.leaf(std::move(gt)));
      }
      fused.push_back(p.proj.forward(bind, gated));
    }
    (void)training;
    return g.concat(fused, 3);
  }

  /// Three stacked stride-2 convolutions tapped at 1/8, 1/16, 1/32, each
  /// tap projected to D by a 1x1 convolution.
  std::array<int, 3> pyramid(Binder<T>& bind, int f_fus, bool training) {
    Graph<T>& g = bind.graph();
    std::array<int, 3> out{};
    int x = f_fus;
    for (int l = 0; l < 3; ++l) {
      Pyr& py = pyr_[(size_t)l];
      if (g.val(x).dim(1) < 2 || g.val(x).dim(2) < 2)
        throw std::invalid_argument("pyramid: spatial size underflow");
      x = g.relu(py.bn.forward(bind, py.conv.forward(bind, x), training));
      out[(size_t)l] = py.proj.forward(bind, x);
    }
    return out;
  }

  /// Flattens each level row-major and concatenates coarse-list order.
  std::pair<int, std::vector<LevelSpec>> tokenize(Binder<T>& bind, const std::array<int, 3>& level_maps) {
    Graph<T>& g = bind.graph();
    std::vector<int> flat;
    std::vector<LevelSpec> levels;
    int offset = 0;
    for (int l = 0; l < 3; ++l) {
      const Tensor<T>& m = g.val(level_maps[(size_t)l]);
      const int B = m.dim(0), gh = m.dim(1), gw = m.dim(2), D = m.dim(3);
      flat.push_back(g.reshape(level_maps[(size_t)l], {B, gh * gw, D}));
      levels.push_back(LevelSpec{gh, gw, offset});
      offset += gh * gw;
    }
    return {g.concat(flat, 1), levels};
  }

  /// Full MFP pass: images in, supplementary tokens out.
  Output forward(Binder<T>& bind, int rgb, int ir, bool training) {
    Output out;
    auto [fr, fi] = stem(bind, rgb, ir, training);
    out.f_fus = multi_receptive_fuse(bind, fr, fi, training);
    out.level_maps = pyramid(bind, out.f_fus, training);
    auto [tokens, levels] = tokenize(bind, out.level_maps);
    out.tokens = tokens;
    out.levels = std::move(levels);
    return out;
  }

 private:
  struct Part {
    Conv2dM<T> rgb_conv, ir_conv;
    LinearM<T> se_fc1, se_fc2;
    Conv2dM<T> proj;
    int ksize = 3;
  };
  struct Pyr {
    Conv2dM<T> conv;
    BatchNormM<T> bn;
    Conv2dM<T> proj;
  };

  ModelConfig cfg_;
  Conv2dM<T> stem_rgb_conv_, stem_ir_conv_;
  BatchNormM<T> stem_rgb_bn_, stem_ir_bn_;
  std::array<Part, 4> parts_;
  std::array<Pyr, 3> pyr_;
  SeMode se_mode_ = SeMode::learned;
  Tensor<T> pinned_gates_;
};

}  // namespace unirgbir
