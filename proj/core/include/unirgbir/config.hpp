#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace unirgbir {

enum class AttentionKind { deformable, global };

AttentionKind parse_attention_kind(const std::string& s);
std::string to_string(AttentionKind k);

/// Architecture hyperparameters. Defaults are the desk-scale geometry; the
/// ViT-Base-shaped variant exists for parameter accounting only.
struct ModelConfig {
  int d = 192;            // token width
  int c = 64;             // MFP stem channels, divisible by 4
  int vit_blocks = 12;    // total transformer blocks
  int vit_heads = 4;      // self-attention heads
  int n_stages = 4;       // stage count N
  std::vector<int> sfi_stages = {1, 2, 3};
  AttentionKind attention = AttentionKind::deformable;
  int deform_points = 4;  // K sampling points per level
  int deform_heads = 4;   // heads for cross attention (both kinds)
  int patch_size = 16;
  int se_reduction = 4;
  int head_classes = 4;
  float injection_scale_init = 0.0f;
  int img_h = 64;         // construction-time resolution (positional encoding)
  int img_w = 64;

  void validate() const;

  int blocks_per_stage() const { return vit_blocks / n_stages; }
  int token_grid_h() const { return img_h / patch_size; }
  int token_grid_w() const { return img_w / patch_size; }
  int n_tokens() const { return token_grid_h() * token_grid_w(); }

  /// ViT-Base-shaped configuration used by the parameter-efficiency report.
  static ModelConfig vit_base_dry_run();
};

/// Optimization hyperparameters for one training run.
struct TrainConfig {
  double lr = 2e-4;
  double weight_decay = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_size = 8;
  int steps = 2000;
  double warmup_frac = 0.05;  // linear warmup over the first 5% of steps
  int eval_interval = 200;
  uint64_t seed = 0;
  int pretrain_steps = 800;
  double pretrain_lr = 1e-3;
};

/// A full run description: model + training + bookkeeping.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
};

/// Flat `key = value` text format. Lines starting with '#' are comments;
/// unknown keys are an error.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);
std::map<std::string, std::string> to_key_values(const RunConfig& cfg);
std::string serialize_run_config(const RunConfig& cfg);
void save_run_config(const RunConfig& cfg, const std::string& path);

std::vector<int> parse_stage_list(const std::string& s);
std::string stage_list_to_string(const std::vector<int>& stages);

}  // namespace unirgbir
