#pragma once

#include "unirgbir/config.hpp"
#include "unirgbir/nn.hpp"

#include <vector>

namespace unirgbir {

/// Pre-norm transformer block: x + MHSA(LN(x)), then x + MLP(LN(x)).
/// Token count and width are preserved.
template <typename T>
struct ViTBlock {
  LayerNormM<T> ln1, ln2;
  LinearM<T> qkv, out, fc1, fc2;
  int heads = 0;
  int dim = 0;

  void init(ParamStore<T>& store, const std::string& name, int d, int n_heads, Rng& rng) {
    heads = n_heads;
    dim = d;
    ln1.init(store, name + ".ln1", d);
    qkv.init(store, name + ".attn.qkv", d, 3 * d, rng);
    out.init(store, name + ".attn.out", d, d, rng);
    ln2.init(store, name + ".ln2", d);
    fc1.init(store, name + ".mlp.fc1", d, 4 * d, rng);
    fc2.init(store, name + ".mlp.fc2", 4 * d, d, rng);
  }

  /// x [B, n, D] -> [B, n, D]. If `attn_probs` is given, the softmax output
  /// of this block is appended ([B*heads, n, n]).
  int forward(Binder<T>& bind, int x, std::vector<Tensor<T>>* attn_probs = nullptr) {
    Graph<T>& g = bind.graph();
    const int B = g.val(x).dim(0);
    const int hd = dim / heads;

    int h = ln1.forward(bind, x);
    int qkv_v = qkv.forward(bind, h);
    int q = g.slice(qkv_v, 2, 0, dim);
    int k = g.slice(qkv_v, 2, dim, dim);
    int v = g.slice(qkv_v, 2, 2 * dim, dim);
    int qh = g.split_heads(q, heads);
    int kh = g.split_heads(k, heads);
    int vh = g.split_heads(v, heads);
    int scores = g.scale(g.bmm(qh, kh, /*transB=*/true), T(1) / std::sqrt(T(hd)));
    int probs = g.softmax_last(scores);
    if (attn_probs) attn_probs->push_back(g.val(probs));
    int ctx = g.merge_heads(g.bmm(probs, vh), B);
    x = g.add(x, out.forward(bind, ctx));

    int h2 = ln2.forward(bind, x);
    int m = fc2.forward(bind, g.gelu(fc1.forward(bind, h2)));
    return g.add(x, m);
  }
};

/// The ViT foundation model: patch embedding, learned positional encoding,
/// vit_blocks transformer blocks split into n_stages equal stages.
template <typename T>
class Backbone {
 public:
  void init(ParamStore<T>& store, const ModelConfig& cfg, int in_channels, Rng& rng) {
    cfg_ = cfg;
    in_channels_ = in_channels;
    patch_.init(store, "backbone.patch_embed", cfg.patch_size, cfg.patch_size, in_channels, cfg.d,
                cfg.patch_size, 0, rng, 0.02);
    Tensor<T> pos({cfg.n_tokens(), cfg.d});
    rng.fill_trunc_normal(pos, 0.02);
    pos_ = store.add("backbone.pos_embed", std::move(pos));
    blocks_.resize((size_t)cfg.vit_blocks);
    for (int i = 0; i < cfg.vit_blocks; ++i)
      blocks_[(size_t)i].init(store, "backbone.blocks." + std::to_string(i), cfg.d, cfg.vit_heads, rng);
    norm_.init(store, "backbone.norm", cfg.d);
  }

  /// images [B, H, W, in_channels] -> tokens [B, n, D] with positional
  /// encoding added. Token grid is 1/patch_size of the input resolution.
  int patch_embed(Binder<T>& bind, int images) {
    Graph<T>& g = bind.graph();
    const Tensor<T>& X = g.val(images);
    if (X.dim(1) % cfg_.patch_size != 0 || X.dim(2) % cfg_.patch_size != 0)
      throw std::invalid_argument("patch_embed: image dims not divisible by patch size");
    if (X.dim(3) != in_channels_) throw std::invalid_argument("patch_embed: channel mismatch");
    const int B = X.dim(0);
    const int gh = X.dim(1) / cfg_.patch_size, gw = X.dim(2) / cfg_.patch_size;
    if (gh != cfg_.token_grid_h() || gw != cfg_.token_grid_w())
      throw std::invalid_argument("patch_embed: resolution differs from the configured grid");
    int t = patch_.forward(bind, images);                 // [B, gh, gw, D]
    t = g.reshape(t, {B, gh * gw, cfg_.d});
    return g.add_rows(t, bind(pos_));
  }

  /// Runs the blocks of 1-based stage `i`. Shape-preserving.
  int stage_forward(Binder<T>& bind, int x, int stage, std::vector<Tensor<T>>* attn_probs = nullptr) {
    if (stage < 1 || stage > cfg_.n_stages) throw std::out_of_range("stage index");
    const int per = cfg_.blocks_per_stage();
    for (int b = (stage - 1) * per; b < stage * per; ++b)
      x = blocks_[(size_t)b].forward(bind, x, attn_probs);
    return x;
  }

  int final_norm(Binder<T>& bind, int x) { return norm_.forward(bind, x); }

  /// Marks every backbone parameter as theta_V.
  void freeze(ParamStore<T>& store) {
    for (auto& p : store)
      if (p.name.rfind("backbone.", 0) == 0) p.frozen = true;
  }

  const ModelConfig& config() const { return cfg_; }
  int in_channels() const { return in_channels_; }
  Param<T>* pos_embed() { return pos_; }
  Conv2dM<T>& patch_proj() { return patch_; }

 private:
  ModelConfig cfg_;
  int in_channels_ = 3;
  Conv2dM<T> patch_;
  Param<T>* pos_ = nullptr;
  std::vector<ViTBlock<T>> blocks_;
  LayerNormM<T> norm_;
};

}  // namespace unirgbir
