#pragma once

#include "unirgbir/graph.hpp"
#include "unirgbir/tensor.hpp"

#include <cmath>
#include <vector>

// Brute-force reference implementations, written as plain loops with no
// shared code from the graph engine. They pin down the attention, sampling
// and normalization conventions so the production path can be checked
// against an independent route.
namespace unirgbir::checks {

template <typename T>
Tensor<T> naive_layernorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                          T eps = T(1e-6)) {
  const int D = x.dim(x.rank() - 1);
  const int64_t rows = x.numel() / D;
  Tensor<T> out(x.shape);
  for (int64_t r = 0; r < rows; ++r) {
    T mean = 0, var = 0;
    for (int d = 0; d < D; ++d) mean += x[r * D + d];
    mean /= T(D);
    for (int d = 0; d < D; ++d) var += (x[r * D + d] - mean) * (x[r * D + d] - mean);
    var /= T(D);
    for (int d = 0; d < D; ++d)
      out[r * D + d] = gamma[d] * (x[r * D + d] - mean) / std::sqrt(var + eps) + beta[d];
  }
  return out;
}

template <typename T>
Tensor<T> naive_linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  const int din = w.dim(0), dout = w.dim(1);
  const int64_t rows = x.numel() / din;
  std::vector<int> shape = x.shape;
  shape.back() = dout;
  Tensor<T> out(shape);
  for (int64_t r = 0; r < rows; ++r)
    for (int o = 0; o < dout; ++o) {
      T acc = b.data.empty() ? T(0) : b[o];
      for (int i = 0; i < din; ++i) acc += x[r * din + i] * w[(int64_t)i * dout + o];
      out[r * dout + o] = acc;
    }
  return out;
}

template <typename T>
void naive_softmax_inplace(T* row, int n) {
  T m = row[0];
  for (int i = 1; i < n; ++i) m = std::max(m, row[i]);
  T sum = 0;
  for (int i = 0; i < n; ++i) {
    row[i] = std::exp(row[i] - m);
    sum += row[i];
  }
  for (int i = 0; i < n; ++i) row[i] /= sum;
}

template <typename T>
T naive_gelu(T v) {
  return v * T(0.5) * (T(1) + std::erf(v / std::sqrt(T(2))));
}

template <typename T>
struct NaiveBlockParams {
  Tensor<T> ln1_gamma, ln1_beta;
  Tensor<T> qkv_w, qkv_b;
  Tensor<T> out_w, out_b;
  Tensor<T> ln2_gamma, ln2_beta;
  Tensor<T> fc1_w, fc1_b;
  Tensor<T> fc2_w, fc2_b;
};

/// Pre-norm transformer block on a single sequence [n, D], O(n^2) loops.
template <typename T>
Tensor<T> naive_vit_block(const Tensor<T>& x, const NaiveBlockParams<T>& p, int heads) {
  const int n = x.dim(0), D = x.dim(1);
  const int hd = D / heads;

  Tensor<T> h = naive_layernorm(x, p.ln1_gamma, p.ln1_beta);
  Tensor<T> qkv = naive_linear(h, p.qkv_w, p.qkv_b);  // [n, 3D]
  Tensor<T> ctx({n, D});
  for (int hh = 0; hh < heads; ++hh) {
    for (int i = 0; i < n; ++i) {
      std::vector<T> scores((size_t)n);
      for (int j = 0; j < n; ++j) {
        T acc = 0;
        for (int d = 0; d < hd; ++d)
          acc += qkv[(int64_t)i * 3 * D + hh * hd + d] * qkv[(int64_t)j * 3 * D + D + hh * hd + d];
        scores[(size_t)j] = acc / std::sqrt(T(hd));
      }
      naive_softmax_inplace(scores.data(), n);
      for (int d = 0; d < hd; ++d) {
        T acc = 0;
        for (int j = 0; j < n; ++j)
          acc += scores[(size_t)j] * qkv[(int64_t)j * 3 * D + 2 * D + hh * hd + d];
        ctx[(int64_t)i * D + hh * hd + d] = acc;
      }
    }
  }
  Tensor<T> attn_out = naive_linear(ctx, p.out_w, p.out_b);
  Tensor<T> x1 = x;
  for (int64_t i = 0; i < x1.numel(); ++i) x1[i] += attn_out[i];

  Tensor<T> h2 = naive_layernorm(x1, p.ln2_gamma, p.ln2_beta);
  Tensor<T> m1 = naive_linear(h2, p.fc1_w, p.fc1_b);
  for (auto& v : m1.data) v = naive_gelu(v);
  Tensor<T> m2 = naive_linear(m1, p.fc2_w, p.fc2_b);
  for (int64_t i = 0; i < x1.numel(); ++i) x1[i] += m2[i];
  return x1;
}

template <typename T>
struct NaiveCrossParams {
  Tensor<T> lnq_gamma, lnq_beta;
  Tensor<T> lnkv_gamma, lnkv_beta;
  // global attention
  Tensor<T> q_w, q_b, k_w, k_b, v_w, v_b;
  // deformable attention
  Tensor<T> value_w, value_b, offset_w, offset_b, attnw_w, attnw_b;
  Tensor<T> out_w, out_b;
};

/// Dense multi-head cross-attention on single sequences q [n, D],
/// kv [m, D].
template <typename T>
Tensor<T> naive_global_cross_attention(const Tensor<T>& q_tokens, const Tensor<T>& kv_tokens,
                                       const NaiveCrossParams<T>& p, int heads) {
  const int n = q_tokens.dim(0), m = kv_tokens.dim(0), D = q_tokens.dim(1);
  const int hd = D / heads;
  Tensor<T> q = naive_linear(naive_layernorm(q_tokens, p.lnq_gamma, p.lnq_beta), p.q_w, p.q_b);
  Tensor<T> kvn = naive_layernorm(kv_tokens, p.lnkv_gamma, p.lnkv_beta);
  Tensor<T> k = naive_linear(kvn, p.k_w, p.k_b);
  Tensor<T> v = naive_linear(kvn, p.v_w, p.v_b);
  Tensor<T> ctx({n, D});
  for (int hh = 0; hh < heads; ++hh)
    for (int i = 0; i < n; ++i) {
      std::vector<T> scores((size_t)m);
      for (int j = 0; j < m; ++j) {
        T acc = 0;
        for (int d = 0; d < hd; ++d) acc += q[(int64_t)i * D + hh * hd + d] * k[(int64_t)j * D + hh * hd + d];
        scores[(size_t)j] = acc / std::sqrt(T(hd));
      }
      naive_softmax_inplace(scores.data(), m);
      for (int d = 0; d < hd; ++d) {
        T acc = 0;
        for (int j = 0; j < m; ++j) acc += scores[(size_t)j] * v[(int64_t)j * D + hh * hd + d];
        ctx[(int64_t)i * D + hh * hd + d] = acc;
      }
    }
  return naive_linear(ctx, p.out_w, p.out_b);
}

/// Bilinear sample of a [gh, gw, D] map at a normalized point, zero padded
/// outside the unit square, half-pixel centers.
template <typename T>
std::vector<T> naive_bilinear_sample(const Tensor<T>& level, T px, T py) {
  const int gh = level.dim(0), gw = level.dim(1), D = level.dim(2);
  const T cx = px * T(gw) - T(0.5), cy = py * T(gh) - T(0.5);
  const int x0 = (int)std::floor(cx), y0 = (int)std::floor(cy);
  const T tx = cx - T(x0), ty = cy - T(y0);
  std::vector<T> out((size_t)D, T(0));
  for (int dy = 0; dy <= 1; ++dy)
    for (int dx = 0; dx <= 1; ++dx) {
      const int yy = y0 + dy, xx = x0 + dx;
      if (yy < 0 || yy >= gh || xx < 0 || xx >= gw) continue;
      const T w = (dy ? ty : T(1) - ty) * (dx ? tx : T(1) - tx);
      for (int d = 0; d < D; ++d) out[(size_t)d] += w * level[((int64_t)yy * gw + xx) * D + d];
    }
  return out;
}

/// Deformable cross-attention on single sequences, every bilinear sample
/// materialized one corner at a time.
template <typename T>
Tensor<T> naive_deformable_cross_attention(const Tensor<T>& q_tokens, const Tensor<T>& kv_tokens,
                                           const NaiveCrossParams<T>& p,
                                           const std::vector<LevelSpec>& levels,
                                           const Tensor<T>& refs, int heads, int points) {
  const int n = q_tokens.dim(0), D = q_tokens.dim(1);
  const int hd = D / heads;
  const int L = (int)levels.size(), K = points;

  Tensor<T> q = naive_layernorm(q_tokens, p.lnq_gamma, p.lnq_beta);
  Tensor<T> kvn = naive_layernorm(kv_tokens, p.lnkv_gamma, p.lnkv_beta);
  Tensor<T> values = naive_linear(kvn, p.value_w, p.value_b);  // [m, D]
  Tensor<T> offsets = naive_linear(q, p.offset_w, p.offset_b);  // [n, heads*L*K*2]
  Tensor<T> wlogits = naive_linear(q, p.attnw_w, p.attnw_b);    // [n, heads*L*K]

  // copy each level into its own map for explicit per-level sampling
  std::vector<Tensor<T>> level_maps;
  for (const auto& ls : levels) {
    Tensor<T> mp({ls.grid_h, ls.grid_w, D});
    for (int64_t i = 0; i < mp.numel(); ++i) mp[i] = values[(int64_t)ls.token_offset * D + i];
    level_maps.push_back(std::move(mp));
  }

  Tensor<T> ctx({n, D});
  for (int i = 0; i < n; ++i)
    for (int hh = 0; hh < heads; ++hh) {
      std::vector<T> w((size_t)L * K);
      for (int lk = 0; lk < L * K; ++lk) w[(size_t)lk] = wlogits[(int64_t)i * heads * L * K + hh * L * K + lk];
      naive_softmax_inplace(w.data(), L * K);
      for (int l = 0; l < L; ++l)
        for (int k = 0; k < K; ++k) {
          const int64_t base = ((int64_t)i * heads * L * K + hh * L * K + l * K + k) * 2;
          const T px = refs[i * 2] + offsets[base] / T(levels[(size_t)l].grid_w);
          const T py = refs[i * 2 + 1] + offsets[base + 1] / T(levels[(size_t)l].grid_h);
          const std::vector<T> sample = naive_bilinear_sample(level_maps[(size_t)l], px, py);
          for (int d = 0; d < hd; ++d)
            ctx[(int64_t)i * D + hh * hd + d] += w[(size_t)(l * K + k)] * sample[(size_t)(hh * hd + d)];
        }
    }
  return naive_linear(ctx, p.out_w, p.out_b);
}

/// One step of the decoupled-weight-decay update rule, spelled out for a
/// single scalar parameter.
struct AdamWScalarRef {
  double m = 0, v = 0;
  int64_t t = 0;
  double step(double& theta, double grad, double lr, double beta1, double beta2, double eps,
              double weight_decay) {
    ++t;
    m = beta1 * m + (1 - beta1) * grad;
    v = beta2 * v + (1 - beta2) * grad * grad;
    const double mhat = m / (1 - std::pow(beta1, (double)t));
    const double vhat = v / (1 - std::pow(beta2, (double)t));
    theta -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * theta);
    return theta;
  }
};

/// Per-class tp/fp/fn counted directly from masks (no confusion matrix).
struct BruteClassStats {
  std::vector<double> iou, acc;
  std::vector<bool> present;
  double miou = 0, macc = 0;
};
BruteClassStats brute_force_metrics(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& gt,
                                    int n_classes);

}  // namespace unirgbir::checks
