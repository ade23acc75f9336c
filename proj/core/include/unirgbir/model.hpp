#pragma once

#include "unirgbir/backbone.hpp"
#include "unirgbir/mfp.hpp"
#include "unirgbir/sfi.hpp"
#include "unirgbir/types.hpp"

#include <map>
#include <optional>
#include <set>
#include <string>

namespace unirgbir {

/// Which network variant is assembled.
///   full     — frozen backbone + MFP + per-stage SFI injection
///   mfp_add  — frozen backbone + MFP, 1/16 tokens added element-wise at
///              the start of every stage (no SFI)
///   baseline — stacked RGB+IR into a 4-channel patch embedding, frozen
///              blocks, no adapter modules
///   pretrain — plain RGB backbone + head (the foundation-model trainer)
enum class ArchMode { full, mfp_add, baseline, pretrain };

ArchMode parse_arch_mode(const std::string& s);
std::string to_string(ArchMode m);

/// Optional observation points filled during forward.
template <typename T>
struct ForwardHooks {
  bool capture = false;
  struct Feature {
    std::string name;
    int stage;  // 0 for stage-independent tensors
    Tensor<T> value;
  };
  std::vector<Feature> features;
  std::vector<int> sfi_trace;               // stages that ran SFI, in order
  std::vector<Tensor<T>>* attn_probs = nullptr;  // backbone softmax rows
  std::vector<Tensor<T>> gate_inputs_curr;  // per gated stage
  std::vector<Tensor<T>> gate_inputs_prev;
  std::vector<Tensor<T>> gate_outputs;
};

template <typename T>
class UniRgbIrModel {
 public:
  UniRgbIrModel(const ModelConfig& cfg, ArchMode mode, Rng& rng) : cfg_(cfg), mode_(mode) {
    cfg_.validate();
    if (mode_ == ArchMode::full && cfg_.sfi_stages.empty())
      throw std::invalid_argument("full mode requires a non-empty sfi stage set");
    const int in_ch = mode_ == ArchMode::baseline ? 4 : 3;
    backbone_.init(store_, cfg_, in_ch, rng);
    head_.init(store_, "head.linear", cfg_.d, cfg_.head_classes, rng);
    if (mode_ == ArchMode::full || mode_ == ArchMode::mfp_add) {
      mfp_.emplace();
      mfp_->init(store_, cfg_, rng);
    }
    if (mode_ == ArchMode::full) {
      for (int s : cfg_.sfi_stages) {
        sfi_[s].init(store_, "sfi.stage" + std::to_string(s), cfg_, rng);
        gamma_[s] = store_.add("inject.gamma" + std::to_string(s),
                               Tensor<T>::full({1}, T(cfg_.injection_scale_init)));
      }
      active_stages_ = cfg_.sfi_stages;
      std::sort(active_stages_.begin(), active_stages_.end());
      refs_ = token_reference_points<T>(cfg_.token_grid_h(), cfg_.token_grid_w());
    }
  }

  /// Restricts SFI to a subset of the constructed stages.
  void set_sfi_stages(const std::vector<int>& stages) {
    if (mode_ != ArchMode::full) throw std::logic_error("set_sfi_stages: model has no SFI modules");
    if (stages.empty()) throw std::invalid_argument("set_sfi_stages: empty set in full mode");
    for (int s : stages)
      if (!sfi_.count(s))
        throw std::invalid_argument("set_sfi_stages: stage " + std::to_string(s) + " has no SFI module");
    active_stages_ = stages;
    std::sort(active_stages_.begin(), active_stages_.end());
  }

  const std::vector<int>& active_sfi_stages() const { return active_stages_; }

  /// Full forward pass: images to per-pixel class logits [B, H, W, classes].
  /// `ir` may be empty for pretrain mode.
  int forward(Binder<T>& bind, int rgb, int ir, bool training, ForwardHooks<T>* hooks = nullptr) {
    Graph<T>& g = bind.graph();
    const Tensor<T>& R = g.val(rgb);
    const int B = R.dim(0), H = R.dim(1), W = R.dim(2);
    const int gh = cfg_.token_grid_h(), gw = cfg_.token_grid_w();

    int x = -1;
    int mfp_tokens = -1;
    std::vector<LevelSpec> levels;

    switch (mode_) {
      case ArchMode::pretrain:
        x = backbone_.patch_embed(bind, rgb);
        break;
      case ArchMode::baseline:
        x = backbone_.patch_embed(bind, g.concat({rgb, ir}, 3));
        break;
      case ArchMode::full:
      case ArchMode::mfp_add: {
        x = backbone_.patch_embed(bind, rgb);
        auto mo = mfp_->forward(bind, rgb, ir, training);
        mfp_tokens = mo.tokens;
        levels = mo.levels;
        if (hooks && hooks->capture) {
          hooks->features.push_back({"f_mfp", 0, g.val(mo.tokens)});
          hooks->features.push_back({"f_fus", 0, g.val(mo.f_fus)});
          for (int l = 0; l < 3; ++l)
            hooks->features.push_back(
                {"pyramid_l" + std::to_string(l + 1), 0, g.val(mo.level_maps[(size_t)l])});
        }
        break;
      }
    }

    std::optional<int> chain;  // previous stage's injected feature
    for (int stage = 1; stage <= cfg_.n_stages; ++stage) {
      if (hooks && hooks->capture) hooks->features.push_back({"f_vit", stage, g.val(x)});
      if (mode_ == ArchMode::full &&
          std::find(active_stages_.begin(), active_stages_.end(), stage) != active_stages_.end()) {
        SfiBlock<T>& blk = sfi_.at(stage);
        int f_tilde = blk.cross_attend(bind, x, mfp_tokens, levels, refs_);
        int z_var = -1;
        int f_sfi_var;
        if (!chain.has_value()) {
          f_sfi_var = f_tilde;
        } else {
          if (hooks) {
            hooks->gate_inputs_curr.push_back(g.val(f_tilde));
            hooks->gate_inputs_prev.push_back(g.val(*chain));
          }
          f_sfi_var = blk.gate_fuse(bind, f_tilde, chain, &z_var);
          if (hooks) hooks->gate_outputs.push_back(g.val(f_sfi_var));
        }
        if (hooks && hooks->capture) {
          hooks->features.push_back({"f_sfi_tilde", stage, g.val(f_tilde)});
          hooks->features.push_back({"f_sfi", stage, g.val(f_sfi_var)});
        }
        if (hooks) hooks->sfi_trace.push_back(stage);
        chain = f_sfi_var;
        x = g.add(x, g.scalar_scale(f_sfi_var, bind(gamma_.at(stage))));
        (void)z_var;
      } else if (mode_ == ArchMode::mfp_add) {
        // 1/16 pyramid level reshaped onto the token grid
        const LevelSpec& mid = levels[1];
        if (mid.grid_h != gh || mid.grid_w != gw)
          throw std::logic_error("mfp_add: 1/16 level does not match the token grid");
        int f16 = g.slice(mfp_tokens, 1, mid.token_offset, gh * gw);
        x = g.add(x, f16);
      }
      if (hooks && hooks->capture) hooks->features.push_back({"stage_input", stage, g.val(x)});
      x = backbone_.stage_forward(bind, x, stage, hooks ? hooks->attn_probs : nullptr);
    }

    x = backbone_.final_norm(bind, x);
    int logits = head_.forward(bind, x);                       // [B, n, classes]
    logits = g.reshape(logits, {B, gh, gw, cfg_.head_classes});
    return g.bilinear_upsample(logits, H, W);
  }

  /// Convenience single-batch inference.
  Tensor<T> logits(const Tensor<T>& rgb, const Tensor<T>& ir, bool training = false,
                   ForwardHooks<T>* hooks = nullptr) {
    Graph<T> g;
    Binder<T> bind(g, train_all_);
    const int rgb_id = g.leaf(rgb);
    const int ir_id = ir.data.empty() ? -1 : g.leaf(ir);
    return g.val(forward(bind, rgb_id, ir_id, training, hooks));
  }

  /// Copies pretrained backbone + head tensors in and freezes the
  /// foundation model. Baseline models receive the 3-channel patch kernel
  /// in their first three input channels, the IR slice zero-initialized,
  /// and keep patch embedding + head trainable.
  void adopt_pretrained(const std::map<std::string, Tensor<T>>& state) {
    for (auto& p : store_) {
      const bool backbone_param = p.name.rfind("backbone.", 0) == 0;
      const bool head_param = p.name.rfind("head.", 0) == 0;
      if (!backbone_param && !head_param) continue;
      auto it = state.find(p.name);
      if (it == state.end()) throw std::runtime_error("pretrained checkpoint missing tensor: " + p.name);
      if (mode_ == ArchMode::baseline && p.name == "backbone.patch_embed.weight") {
        const Tensor<T>& src = it->second;  // [P, P, 3, D]
        if (src.rank() != 4 || src.dim(2) != 3)
          throw std::runtime_error("pretrained patch embedding has unexpected shape " + src.shape_str());
        Tensor<T>& dst = p.value;  // [P, P, 4, D]
        dst.fill(T(0));
        const int P = src.dim(0), D = src.dim(3);
        for (int ky = 0; ky < P; ++ky)
          for (int kx = 0; kx < P; ++kx)
            for (int c = 0; c < 3; ++c)
              for (int d = 0; d < D; ++d)
                dst[(((int64_t)ky * P + kx) * 4 + c) * D + d] = src[(((int64_t)ky * P + kx) * 3 + c) * D + d];
        continue;
      }
      if (!(it->second.shape == p.value.shape))
        throw std::runtime_error("pretrained tensor shape mismatch for " + p.name + ": checkpoint " +
                                 it->second.shape_str() + " vs model " + p.value.shape_str());
      p.value = it->second;
    }
    backbone_.freeze(store_);
    if (mode_ == ArchMode::baseline) {
      // fine-tune the patch embedding and the head; blocks stay frozen
      store_.at("backbone.patch_embed.weight").frozen = false;
      store_.at("backbone.patch_embed.bias").frozen = false;
    }
  }

  /// Clears every frozen flag (the full fine-tuning paradigm).
  void unfreeze_all() {
    for (auto& p : store_) p.frozen = false;
    train_all_ = true;
  }

  void set_injection_scale(int stage, T v) { gamma_.at(stage)->value[0] = v; }
  T injection_scale(int stage) const { return gamma_.at(stage)->value[0]; }

  ParamStore<T>& params() { return store_; }
  const ParamStore<T>& params() const { return store_; }
  Backbone<T>& backbone() { return backbone_; }
  Mfp<T>* mfp() { return mfp_ ? &*mfp_ : nullptr; }
  SfiBlock<T>* sfi(int stage) {
    auto it = sfi_.find(stage);
    return it == sfi_.end() ? nullptr : &it->second;
  }
  LinearM<T>& head() { return head_; }
  const ModelConfig& config() const { return cfg_; }
  ArchMode mode() const { return mode_; }
  bool train_all() const { return train_all_; }
  const Tensor<T>& reference_points() const { return refs_; }

 private:
  ModelConfig cfg_;
  ArchMode mode_;
  ParamStore<T> store_;
  Backbone<T> backbone_;
  LinearM<T> head_;
  std::optional<Mfp<T>> mfp_;
  std::map<int, SfiBlock<T>> sfi_;
  std::map<int, Param<T>*> gamma_;
  std::vector<int> active_stages_;
  Tensor<T> refs_;
  bool train_all_ = false;
};

inline ArchMode parse_arch_mode(const std::string& s) {
  if (s == "full") return ArchMode::full;
  if (s == "mfp_add") return ArchMode::mfp_add;
  if (s == "baseline") return ArchMode::baseline;
  if (s == "pretrain") return ArchMode::pretrain;
  throw std::invalid_argument("unknown mode: " + s);
}

inline std::string to_string(ArchMode m) {
  switch (m) {
    case ArchMode::full: return "full";
    case ArchMode::mfp_add: return "mfp_add";
    case ArchMode::baseline: return "baseline";
    case ArchMode::pretrain: return "pretrain";
  }
  return "?";
}

}  // namespace unirgbir
