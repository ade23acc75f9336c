#pragma once

#include "unirgbir/config.hpp"
#include "unirgbir/nn.hpp"

#include <optional>
#include <vector>

namespace unirgbir {

/// Normalized center of each token of a gh x gw grid, row-major, (x, y).
template <typename T>
Tensor<T> token_reference_points(int gh, int gw) {
  Tensor<T> refs({gh * gw, 2});
  for (int r = 0; r < gh; ++r)
    for (int c = 0; c < gw; ++c) {
      refs[(r * gw + c) * 2] = (T(c) + T(0.5)) / T(gw);
      refs[(r * gw + c) * 2 + 1] = (T(r) + T(0.5)) / T(gh);
    }
  return refs;
}

/// Supplementary Feature Injector for one stage: layer-normalized sparse
/// cross-attention from ViT tokens (query) into the multi-scale pool
/// (key/value), plus the gating network for progressive injection.
template <typename T>
class SfiBlock {
 public:
  void init(ParamStore<T>& store, const std::string& name, const ModelConfig& cfg, Rng& rng) {
    kind_ = cfg.attention;
    heads_ = cfg.deform_heads;
    points_ = cfg.deform_points;
    dim_ = cfg.d;
    ln_q_.init(store, name + ".ln_q", cfg.d);
    ln_kv_.init(store, name + ".ln_kv", cfg.d);
    if (kind_ == AttentionKind::deformable) {
      value_.init(store, name + ".value", cfg.d, cfg.d, rng);
      output_.init(store, name + ".output", cfg.d, cfg.d, rng);
      // zero init: sampling starts at the reference points with uniform
      // weights, the documented initial state
      offset_.init(store, name + ".offset", cfg.d, heads_ * 3 * points_ * 2, rng, 0.02, /*zero_weight=*/true);
      attnw_.init(store, name + ".attnw", cfg.d, heads_ * 3 * points_, rng, 0.02, /*zero_weight=*/true);
    } else {
      q_proj_.init(store, name + ".q", cfg.d, cfg.d, rng);
      k_proj_.init(store, name + ".k", cfg.d, cfg.d, rng);
      v_proj_.init(store, name + ".v", cfg.d, cfg.d, rng);
      output_.init(store, name + ".output", cfg.d, cfg.d, rng);
    }
    gate_.init(store, name + ".gate", 2 * cfg.d, 1, rng);
  }

  /// f_vit [B, n, D] queries, f_mfp [B, m, D] keys/values spanning the
  /// given levels. Returns [B, n, D] with f_vit's grid.
  int cross_attend(Binder<T>& bind, int f_vit, int f_mfp, const std::vector<LevelSpec>& levels,
                   const Tensor<T>& refs, std::optional<int>* attn_weights_out = nullptr) {
    Graph<T>& g = bind.graph();
    if (g.val(f_vit).dim(2) != dim_ || g.val(f_mfp).dim(2) != dim_)
      throw std::invalid_argument("cross_attend: token width mismatch");
    const int B = g.val(f_vit).dim(0), n = g.val(f_vit).dim(1);

    int q = ln_q_.forward(bind, f_vit);
    int kv = ln_kv_.forward(bind, f_mfp);

    if (kind_ == AttentionKind::deformable) {
      const int L = (int)levels.size(), K = points_;
      int values = value_.forward(bind, kv);  // [B, m, D]
      int off = g.reshape(offset_.forward(bind, q), {B, n, heads_, L, K, 2});
      int locs = g.make_sample_locs(off, refs, levels);
      int wlogits = g.reshape(attnw_.forward(bind, q), {B, n, heads_, L * K});
      int w = g.softmax_last(wlogits);
      if (attn_weights_out) *attn_weights_out = w;
      w = g.reshape(w, {B, n, heads_, L, K});
      int attended = g.ms_attend(values, locs, w, levels, heads_);
      return output_.forward(bind, attended);
    }

    // global: dense softmax cross-attention over all m keys
    const int hd = dim_ / heads_;
    int qh = g.split_heads(q_proj_.forward(bind, q), heads_);
    int kh = g.split_heads(k_proj_.forward(bind, kv), heads_);
    int vh = g.split_heads(v_proj_.forward(bind, kv), heads_);
    int scores = g.scale(g.bmm(qh, kh, /*transB=*/true), T(1) / std::sqrt(T(hd)));
    int probs = g.softmax_last(scores);
    if (attn_weights_out) *attn_weights_out = probs;
    int ctx = g.merge_heads(g.bmm(probs, vh), B);
    return output_.forward(bind, ctx);
  }

  /// Progressive injection. First stage in the chain passes through; later
  /// stages form the per-token convex combination
  /// (1 - z) * curr + z * prev with z = sigmoid(linear([prev, curr])).
  int gate_fuse(Binder<T>& bind, int curr, std::optional<int> prev, int* z_out = nullptr) {
    Graph<T>& g = bind.graph();
    if (!prev.has_value()) return curr;
    if (!g.val(curr).same_shape(g.val(*prev))) throw std::invalid_argument("gate_fuse: shape mismatch");
    int cat = g.concat({*prev, curr}, 2);  // [B, n, 2D]
    int z = g.sigmoid(gate_.forward(bind, cat));  // [B, n, 1]
    if (z_out) *z_out = z;
    int keep = g.bcast_mul_last(curr, g.one_minus(z));
    int carry = g.bcast_mul_last(*prev, z);
    return g.add(keep, carry);
  }

  AttentionKind kind() const { return kind_; }

 private:
  AttentionKind kind_ = AttentionKind::deformable;
  int heads_ = 4, points_ = 4, dim_ = 0;
  LayerNormM<T> ln_q_, ln_kv_;
  LinearM<T> value_, output_, offset_, attnw_;  // deformable
  LinearM<T> q_proj_, k_proj_, v_proj_;         // global
  LinearM<T> gate_;
};

}  // namespace unirgbir
