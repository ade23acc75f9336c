#pragma once

#include "unirgbir/tensor.hpp"

#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <utility>
#include <vector>

namespace unirgbir {

/// Spatial extent of one pyramid level inside a flattened token sequence.
struct LevelSpec {
  int grid_h = 0;
  int grid_w = 0;
  int token_offset = 0;  // start row inside the concatenated token tensor
};

/// Reverse-mode tape. Ops evaluate eagerly; backward replays the tape in
/// reverse creation order, which is a valid topological order by
/// construction. One Graph instance per forward pass, single-threaded.
template <typename T>
class Graph {
 public:
  struct Node {
    Tensor<T> val;
    Tensor<T> grad;
    std::function<void()> back;
    bool requires_grad = false;
    bool has_grad = false;
  };

  int leaf(Tensor<T> v, bool requires_grad = false) {
    Node n;
    n.val = std::move(v);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  const Tensor<T>& val(int id) const { return nodes_[static_cast<size_t>(id)].val; }
  Tensor<T>& grad(int id) { return ensure_grad(id); }
  bool has_grad(int id) const { return nodes_[static_cast<size_t>(id)].has_grad; }
  bool requires_grad(int id) const { return nodes_[static_cast<size_t>(id)].requires_grad; }
  size_t size() const { return nodes_.size(); }

  void backward(int root) {
    if (nodes_[static_cast<size_t>(root)].val.numel() != 1)
      throw std::logic_error("backward root must be scalar");
    ensure_grad(root).fill(T(1));
    for (int i = root; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (n.has_grad && n.back) n.back();
    }
  }

  // ---- elementwise ----

  int add(int a, int b) {
    check_same(a, b, "add");
    Tensor<T> out = val(a);
    const Tensor<T>& B = val(b);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] += B[i];
    return unary_or_binary(std::move(out), a, b, [this](int y, int a2, int b2) {
      const Tensor<T>& g = nodes_[(size_t)y].grad;
      if (requires_grad(a2)) accumulate(a2, g);
      if (requires_grad(b2)) accumulate(b2, g);
    });
  }

  int sub(int a, int b) {
    check_same(a, b, "sub");
    Tensor<T> out = val(a);
    const Tensor<T>& B = val(b);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] -= B[i];
    return unary_or_binary(std::move(out), a, b, [this](int y, int a2, int b2) {
      const Tensor<T>& g = nodes_[(size_t)y].grad;
      if (requires_grad(a2)) accumulate(a2, g);
      if (requires_grad(b2)) {
        Tensor<T>& gb = ensure_grad(b2);
        for (int64_t i = 0; i < g.numel(); ++i) gb[i] -= g[i];
      }
    });
  }

  int mul(int a, int b) {
    check_same(a, b, "mul");
    Tensor<T> out = val(a);
    const Tensor<T>& B = val(b);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] *= B[i];
    return unary_or_binary(std::move(out), a, b, [this](int y, int a2, int b2) {
      const Tensor<T>& g = nodes_[(size_t)y].grad;
      if (requires_grad(a2)) {
        Tensor<T>& ga = ensure_grad(a2);
        const Tensor<T>& vb = val(b2);
        for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * vb[i];
      }
      if (requires_grad(b2)) {
        Tensor<T>& gb = ensure_grad(b2);
        const Tensor<T>& va = val(a2);
        for (int64_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * va[i];
      }
    });
  }

  int scale(int a, T c) {
    Tensor<T> out = val(a);
    for (auto& v : out.data) v *= c;
    return unary(std::move(out), a, [this, c](int y, int a2) {
      const Tensor<T>& g = nodes_[(size_t)y].grad;
      Tensor<T>& ga = ensure_grad(a2);
      for (int64_t i = 0; i < g.numel(); ++i) ga[i] += c * g[i];
    });
  }

  int add_const(int a, T c) {
    Tensor<T> out = val(a);
    for (auto& v : out.data) v += c;
    return unary(std::move(out), a, [this](int y, int a2) { accumulate(a2, nodes_[(size_t)y].grad); });
  }

  int one_minus(int a) {
    Tensor<T> out = val(a);
    for (auto& v : out.data) v = T(1) - v;
    return unary(std::move(out), a, [this](int y, int a2) {
      const Tensor<T>& g = nodes_[(size_t)y].grad;
      Tensor<T>& ga = ensure_grad(a2);
      for (int64_t i = 0; i < g.numel(); ++i) ga[i] -= g[i];
    });
  }

  /// y = s * x where s is a 1-element variable (learnable scalar).
  int scalar_scale(int x, int s) {
    if (val(s).numel() != 1) throw std::logic_error("scalar_scale: s must have 1 element");
    const T sv = val(s)[0];
    Tensor<T> out = val(x);
    for (auto& v : out.data) v *= sv;
    return unary_or_binary(std::move(out), x, s, [this, sv](int y, int x2, int s2) {
      const Tensor<T>& g = nodes_[(size_t)y].grad;
      if (requires_grad(x2)) {
        Tensor<T>& gx = ensure_grad(x2);
        for (int64_t i = 0; i < g.numel(); ++i) gx[i] += sv * g[i];
      }
      if (requires_grad(s2)) {
        const Tensor<T>& vx = val(x2);
        T acc = 0;
        for (int64_t i = 0; i < g.numel(); ++i) acc += g[i] * vx[i];
        ensure_grad(s2)[0] += acc;
      }
    });
  }

  int relu(int a) {
    Tensor<T> out = val(a);
    for (auto& v : out.data) v = v > T(0) ? v : T(0);
    return unary(std::move(out), a, [this](int y, int a2) {
      const Tensor<T>& g = nodes_[(size_t)y].grad;
      const Tensor<T>& x = val(a2);
      Tensor<T>& ga = ensure_grad(a2);
      for (int64_t i = 0; i < g.numel(); ++i)
        if (x[i] > T(0)) ga[i] += g[i];
    });
  }

  int sigmoid(int a) {
    Tensor<T> out = val(a);
    for (auto& v : out.data) v = T(1) / (T(1) + std::exp(-v));
    return unary(std::move(out), a, [this](int y, int a2) {
      const Tensor<T>& g = nodes_[(size_t)y].grad;
      const Tensor<T>& s = nodes_[(size_t)y].val;
      Tensor<T>& ga = ensure_grad(a2);
      for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * s[i] * (T(1) - s[i]);
    });
  }

  /// Exact GELU: x * Phi(x).
  int gelu(int a) {
    Tensor<T> out = val(a);
    for (auto& v : out.data) v = v * T(0.5) * (T(1) + std::erf(v * T(M_SQRT1_2)));
    return unary(std::move(out), a, [this](int y, int a2) {
      const Tensor<T>& g = nodes_[(size_t)y].grad;
      const Tensor<T>& x = val(a2);
      Tensor<T>& ga = ensure_grad(a2);
      const T inv_sqrt2pi = T(0.3989422804014326779);
      for (int64_t i = 0; i < g.numel(); ++i) {
        const T phi = T(0.5) * (T(1) + std::erf(x[i] * T(M_SQRT1_2)));
        const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * x[i] * x[i]);
        ga[i] += g[i] * (phi + x[i] * pdf);
      }
    });
  }

  // ---- linear algebra ----

  /// x [.., din] @ w [din, dout] + b [dout]; pass b = -1 for no bias.
  int linear(int x, int w, int b) {
    const Tensor<T>& X = val(x);
    const Tensor<T>& W = val(w);
    if (W.rank() != 2) throw std::logic_error("linear: weight must be rank 2");
    const int din = W.dim(0), dout = W.dim(1);
    if (X.dim(X.rank() - 1) != din) throw std::logic_error("linear: input width mismatch");
    const int64_t rows = X.numel() / din;

    std::vector<int> oshape = X.shape;
    oshape.back() = dout;
    Tensor<T> out(oshape);
    as_matrix(out, rows, dout).noalias() = as_matrix(X, rows, din) * as_matrix(W, din, dout);
    if (b >= 0) {
      const Tensor<T>& B = val(b);
      MatMap<T> O = as_matrix(out, rows, dout);
      O.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(B.ptr(), dout);
    }

    const int y = leaf_result(std::move(out), requires_grad(x) || requires_grad(w) || (b >= 0 && requires_grad(b)));
    if (!nodes_[(size_t)y].requires_grad) return y;
    nodes_[(size_t)y].back = [this, y, x, w, b, rows, din, dout]() {
      const Tensor<T>& g = nodes_[(size_t)y].grad;
      ConstMatMap<T> G = as_matrix(g, rows, dout);
      if (requires_grad(x)) {
        MatMap<T> GX = as_matrix(ensure_grad(x), rows, din);
        GX.noalias() += G * as_matrix(val(w), din, dout).transpose();
      }
      if (requires_grad(w)) {
        MatMap<T> GW = as_matrix(ensure_grad(w), din, dout);
        GW.noalias() += as_matrix(val(x), rows, din).transpose() * G;
      }
      if (b >= 0 && requires_grad(b)) {
        Tensor<T>& gb = ensure_grad(b);
        Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(gb.ptr(), dout) += G.colwise().sum();
      }
    };
    return y;
  }

  /// Batched matmul: a [Ba, m, k] @ b [Ba, k, n] (or b [Ba, n, k] when
  /// transB). Rank-2 inputs are treated as batch 1.
  int bmm(int a, int b, bool transB = false) {
    const Tensor<T>& A = val(a);
    const Tensor<T>& B = val(b);
    const int Ba = A.rank() == 3 ? A.dim(0) : 1;
    if ((B.rank() == 3 ? B.dim(0) : 1) != Ba) throw std::logic_error("bmm: batch mismatch");
    const int m = A.dim(A.rank() - 2), k = A.dim(A.rank() - 1);
    const int bk = transB ? B.dim(B.rank() - 1) : B.dim(B.rank() - 2);
    const int n = transB ? B.dim(B.rank() - 2) : B.dim(B.rank() - 1);
    if (bk != k) throw std::logic_error("bmm: inner dim mismatch");

    Tensor<T> out(A.rank() == 3 ? std::vector<int>{Ba, m, n} : std::vector<int>{m, n});
    for (int i = 0; i < Ba; ++i) {
      ConstMatMap<T> Ai(A.ptr() + (int64_t)i * m * k, m, k);
      MatMap<T> Oi(out.ptr() + (int64_t)i * m * n, m, n);
      if (transB) {
        ConstMatMap<T> Bi(B.ptr() + (int64_t)i * n * k, n, k);
        Oi.noalias() = Ai * Bi.transpose();
      } else {
        ConstMatMap<T> Bi(B.ptr() + (int64_t)i * k * n, k, n);
        Oi.noalias() = Ai * Bi;
      }
    }
    return unary_or_binary(std::move(out), a, b, [this, Ba, m, k, n, transB](int y, int a2, int b2) {
      const Tensor<T>& g = nodes_[(size_t)y].grad;
      for (int i = 0; i < Ba; ++i) {
        ConstMatMap<T> Gi(g.ptr() + (int64_t)i * m * n, m, n);
        if (requires_grad(a2)) {
          MatMap<T> GA(ensure_grad(a2).ptr() + (int64_t)i * m * k, m, k);
          if (transB) {
            ConstMatMap<T> Bi(val(b2).ptr() + (int64_t)i * n * k, n, k);
            GA.noalias() += Gi * Bi;
          } else {
            ConstMatMap<T> Bi(val(b2).ptr() + (int64_t)i * k * n, k, n);
            GA.noalias() += Gi * Bi.transpose();
          }
        }
        if (requires_grad(b2)) {
          ConstMatMap<T> Ai(val(a2).ptr() + (int64_t)i * m * k, m, k);
          if (transB) {
            MatMap<T> GB(ensure_grad(b2).ptr() + (int64_t)i * n * k, n, k);
            GB.noalias() += Gi.transpose() * Ai;
          } else {
            MatMap<T> GB(ensure_grad(b2).ptr() + (int64_t)i * k * n, k, n);
            GB.noalias() += Ai.transpose() * Gi;
          }
        }
      }
    });
  }

  // ---- shape ----

  int reshape(int a, std::vector<int> s) {
    Tensor<T> out = val(a).reshaped(std::move(s));
    return unary(std::move(out), a, [this](int y, int a2) {
      const Tensor<T>& g = nodes_[(size_t)y].grad;
      Tensor<T>& ga = ensure_grad(a2);
      for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
    });
  }

  int concat(const std::vector<int>& xs, int axis) {
    if (xs.empty()) throw std::logic_error("concat: no inputs");
    const Tensor<T>& first = val(xs[0]);
    std::vector<int> oshape = first.shape;
    int total = 0;
    for (int x : xs) {
      const Tensor<T>& t = val(x);
      if (t.rank() != first.rank()) throw std::logic_error("concat: rank mismatch");
      for (int d = 0; d < t.rank(); ++d)
        if (d != axis && t.dim(d) != first.dim(d)) throw std::logic_error("concat: shape mismatch");
      total += t.dim(axis);
    }
    oshape[(size_t)axis] = total;
    Tensor<T> out(oshape);

    const int64_t outer = prod(oshape, 0, axis);
    const int64_t inner = prod(oshape, axis + 1, (int)oshape.size());
    int64_t pos = 0;
    for (int x : xs) {
      const Tensor<T>& t = val(x);
      const int64_t span = (int64_t)t.dim(axis) * inner;
      for (int64_t o = 0; o < outer; ++o)
        std::copy_n(t.ptr() + o * span, span, out.ptr() + o * total * inner + pos);
      pos += span;
    }

    bool rg = false;
    for (int x : xs) rg |= requires_grad(x);
    const int y = leaf_result(std::move(out), rg);
    if (!rg) return y;
    std::vector<int> inputs = xs;
    nodes_[(size_t)y].back = [this, y, inputs, axis, outer, inner, total]() {
      const Tensor<T>& g = nodes_[(size_t)y].grad;
      int64_t pos2 = 0;
      for (int x : inputs) {
        const int64_t span = (int64_t)val(x).dim(axis) * inner;
        if (requires_grad(x)) {
          Tensor<T>& gx = ensure_grad(x);
          for (int64_t o = 0; o < outer; ++o) {
            const T* src = g.ptr() + o * (int64_t)total * inner + pos2;
            T* dst = gx.ptr() + o * span;
            for (int64_t i = 0; i < span; ++i) dst[i] += src[i];
          }
        }
        pos2 += span;
      }
    };
    return y;
  }

  int slice(int a, int axis, int start, int len) {
    const Tensor<T>& A = val(a);
    if (start < 0 || start + len > A.dim(axis)) throw std::logic_error("slice out of range");
    std::vector<int> oshape = A.shape;
    oshape[(size_t)axis] = len;
    Tensor<T> out(oshape);
    const int64_t outer = prod(A.shape, 0, axis);
    const int64_t inner = prod(A.shape, axis + 1, A.rank());
    const int64_t src_span = (int64_t)A.dim(axis) * inner;
    const int64_t dst_span = (int64_t)len * inner;
    for (int64_t o = 0; o < outer; ++o)
      std::copy_n(A.ptr() + o * src_span + start * inner, dst_span, out.ptr() + o * dst_span);
    return unary(std::move(out), a, [this, axis, start, len, outer, inner, src_span, dst_span](int y, int a2) {
      const Tensor<T>& g = nodes_[(size_t)y].grad;
      Tensor<T>& ga = ensure_grad(a2);
      for (int64_t o = 0; o < outer; ++o) {
        const T* src = g.ptr() + o * dst_span;
        T* dst = ga.ptr() + o * src_span + start * inner;
        for (int64_t i = 0; i < dst_span; ++i) dst[i] += src[i];
      }
      (void)len;
    });
  }

  /// [B, n, D] -> [B*H, n, D/H]
  int split_heads(int x, int H) {
    const Tensor<T>& X = val(x);
    const int B = X.dim(0), n = X.dim(1), D = X.dim(2);
    if (D % H != 0) throw std::logic_error("split_heads: D % H != 0");
    const int hd = D / H;
    Tensor<T> out({B * H, n, hd});
    for (int b = 0; b < B; ++b)
      for (int h = 0; h < H; ++h)
        for (int i = 0; i < n; ++i)
          std::copy_n(X.ptr() + ((int64_t)(b * n + i)) * D + h * hd, hd,
                      out.ptr() + ((int64_t)((b * H + h) * n + i)) * hd);
    return unary(std::move(out), x, [this, B, n, D, H, hd](int y, int x2) {
      const Tensor<T>& g = nodes_[(size_t)y].grad;
      Tensor<T>& gx = ensure_grad(x2);
      for (int b = 0; b < B; ++b)
        for (int h = 0; h < H; ++h)
          for (int i = 0; i < n; ++i) {
            const T* src = g.ptr() + ((int64_t)((b * H + h) * n + i)) * hd;
            T* dst = gx.ptr() + ((int64_t)(b * n + i)) * D + h * hd;
            for (int k = 0; k < hd; ++k) dst[k] += src[k];
          }
    });
  }

  /// [B*H, n, hd] -> [B, n, H*hd]
  int merge_heads(int x, int B) {
    const Tensor<T>& X = val(x);
    const int BH = X.dim(0), n = X.dim(1), hd = X.dim(2);
    if (BH % B != 0) throw std::logic_error("merge_heads: batch mismatch");
    const int H = BH / B, D = H * hd;
    Tensor<T> out({B, n, D});
    for (int b = 0; b < B; ++b)
      for (int h = 0; h < H; ++h)
        for (int i = 0; i < n; ++i)
          std::copy_n(X.ptr() + ((int64_t)((b * H + h) * n + i)) * hd, hd,
                      out.ptr() + ((int64_t)(b * n + i)) * D + h * hd);
    return unary(std::move(out), x, [this, B, n, D, H, hd](int y, int x2) {
      const Tensor<T>& g = nodes_[(size_t)y].grad;
      Tensor<T>& gx = ensure_grad(x2);
      for (int b = 0; b < B; ++b)
        for (int h = 0; h < H; ++h)
          for (int i = 0; i < n; ++i) {
            const T* src = g.ptr() + ((int64_t)(b * n + i)) * D + h * hd;
            T* dst = gx.ptr() + ((int64_t)((b * H + h) * n + i)) * hd;
            for (int k = 0; k < hd; ++k) dst[k] += src[k];
          }
    });
  }

  /// x [B, n, D] + p [n, D], p broadcast over the batch.
  int add_rows(int x, int p) {
    const Tensor<T>& X = val(x);
    const Tensor<T>& P = val(p);
    const int B = X.dim(0);
    const int64_t span = P.numel();
    if (X.numel() != B * span) throw std::logic_error("add_rows: shape mismatch");
    Tensor<T> out = X;
    for (int b = 0; b < B; ++b)
      for (int64_t i = 0; i < span; ++i) out[b * span + i] += P[i];
    return unary_or_binary(std::move(out), x, p, [this, B, span](int y, int x2, int p2) {
      const Tensor<T>& g = nodes_[(size_t)y].grad;
      if (requires_grad(x2)) accumulate(x2, g);
      if (requires_grad(p2)) {
        Tensor<T>& gp = ensure_grad(p2);
        for (int b = 0; b < B; ++b)
          for (int64_t i = 0; i < span; ++i) gp[i] += g[b * span + i];
      }
    });
  }

  /// x [B, n, D] * z [B, n, 1], z broadcast over the channel axis.
  int bcast_mul_last(int x, int z) {
    const Tensor<T>& X = val(x);
    const Tensor<T>& Z = val(z);
    const int B = X.dim(0), n = X.dim(1), D = X.dim(2);
    if (Z.dim(0) != B || Z.dim(1) != n || Z.dim(2) != 1) throw std::logic_error("bcast_mul_last: z shape");
    Tensor<T> out = X;
    for (int64_t r = 0; r < (int64_t)B * n; ++r) {
      const T zv = Z[r];
      for (int d = 0; d < D; ++d) out[r * D + d] *= zv;
    }
    return unary_or_binary(std::move(out), x, z, [this, B, n, D](int y, int x2, int z2) {
      const Tensor<T>& g = nodes_[(size_t)y].grad;
      if (requires_grad(x2)) {
        Tensor<T>& gx = ensure_grad(x2);
        const Tensor<T>& Z = val(z2);
        for (int64_t r = 0; r < (int64_t)B * n; ++r)
          for (int d = 0; d < D; ++d) gx[r * D + d] += g[r * D + d] * Z[r];
      }
      if (requires_grad(z2)) {
        Tensor<T>& gz = ensure_grad(z2);
        const Tensor<T>& X = val(x2);
        for (int64_t r = 0; r < (int64_t)B * n; ++r) {
          T acc = 0;
          for (int d = 0; d < D; ++d) acc += g[r * D + d] * X[r * D + d];
          gz[r] += acc;
        }
      }
    });
  }

  // ---- normalization / softmax ----

  int layernorm(int x, int gamma, int beta, T eps = T(1e-6)) {
    const Tensor<T>& X = val(x);
    const int D = X.dim(X.rank() - 1);
    const int64_t rows = X.numel() / D;
    Tensor<T> out(X.shape);
    auto xhat = std::make_shared<Tensor<T>>(X.shape);
    auto inv = std::make_shared<std::vector<T>>((size_t)rows);
    const Tensor<T>& G = val(gamma);
    const Tensor<T>& Bt = val(beta);
    for (int64_t r = 0; r < rows; ++r) {
      const T* xr = X.ptr() + r * D;
      T mean = 0;
      for (int d = 0; d < D; ++d) mean += xr[d];
      mean /= T(D);
      T var = 0;
      for (int d = 0; d < D; ++d) var += (xr[d] - mean) * (xr[d] - mean);
      var /= T(D);
      const T iv = T(1) / std::sqrt(var + eps);
      (*inv)[(size_t)r] = iv;
      for (int d = 0; d < D; ++d) {
        const T xh = (xr[d] - mean) * iv;
        (*xhat)[r * D + d] = xh;
        out[r * D + d] = G[d] * xh + Bt[d];
      }
    }
    const int y = leaf_result(std::move(out), requires_grad(x) || requires_grad(gamma) || requires_grad(beta));
    if (!nodes_[(size_t)y].requires_grad) return y;
    nodes_[(size_t)y].back = [this, y, x, gamma, beta, rows, D, xhat, inv]() {
      const Tensor<T>& g = nodes_[(size_t)y].grad;
      const Tensor<T>& G = val(gamma);
      if (requires_grad(beta)) {
        Tensor<T>& gb = ensure_grad(beta);
        for (int64_t r = 0; r < rows; ++r)
          for (int d = 0; d < D; ++d) gb[d] += g[r * D + d];
      }
      if (requires_grad(gamma)) {
        Tensor<T>& gg = ensure_grad(gamma);
        for (int64_t r = 0; r < rows; ++r)
          for (int d = 0; d < D; ++d) gg[d] += g[r * D + d] * (*xhat)[r * D + d];
      }
      if (requires_grad(x)) {
        Tensor<T>& gx = ensure_grad(x);
        for (int64_t r = 0; r < rows; ++r) {
          T mean_dxhat = 0, mean_dxhat_xhat = 0;
          for (int d = 0; d < D; ++d) {
            const T dxh = g[r * D + d] * G[d];
            mean_dxhat += dxh;
            mean_dxhat_xhat += dxh * (*xhat)[r * D + d];
          }
          mean_dxhat /= T(D);
          mean_dxhat_xhat /= T(D);
          const T iv = (*inv)[(size_t)r];
          for (int d = 0; d < D; ++d) {
            const T dxh = g[r * D + d] * G[d];
            gx[r * D + d] += iv * (dxh - mean_dxhat - (*xhat)[r * D + d] * mean_dxhat_xhat);
          }
        }
      }
    };
    return y;
  }

  /// Per-channel normalization over batch and spatial dims, learned affine.
  /// In training mode batch statistics are used and the running stats
  /// (owned by the caller) are updated in place; in eval mode the running
  /// stats are read. x is [B, H, W, C].
  int batchnorm(int x, int gamma, int beta, Tensor<T>* run_mean, Tensor<T>* run_var,
                bool training, T momentum = T(0.1), T eps = T(1e-5)) {
    const Tensor<T>& X = val(x);
    const int C = X.dim(X.rank() - 1);
    const int64_t rows = X.numel() / C;
    const Tensor<T>& G = val(gamma);
    const Tensor<T>& Bt = val(beta);
    Tensor<T> out(X.shape);

    if (!training) {
      std::vector<T> scale((size_t)C), shift((size_t)C);
      for (int c = 0; c < C; ++c) {
        scale[(size_t)c] = G[c] / std::sqrt((*run_var)[c] + eps);
        shift[(size_t)c] = Bt[c] - (*run_mean)[c] * scale[(size_t)c];
      }
      for (int64_t r = 0; r < rows; ++r)
        for (int c = 0; c < C; ++c) out[r * C + c] = X[r * C + c] * scale[(size_t)c] + shift[(size_t)c];
      auto sc = std::make_shared<std::vector<T>>(std::move(scale));
      return unary(std::move(out), x, [this, rows, C, sc](int y, int x2) {
        const Tensor<T>& g = nodes_[(size_t)y].grad;
        Tensor<T>& gx = ensure_grad(x2);
        for (int64_t r = 0; r < rows; ++r)
          for (int c = 0; c < C; ++c) gx[r * C + c] += g[r * C + c] * (*sc)[(size_t)c];
      });
    }

    auto mean = std::make_shared<std::vector<T>>((size_t)C, T(0));
    auto invstd = std::make_shared<std::vector<T>>((size_t)C);
    auto xhat = std::make_shared<Tensor<T>>(X.shape);
    std::vector<T> var((size_t)C, T(0));
    for (int64_t r = 0; r < rows; ++r)
      for (int c = 0; c < C; ++c) (*mean)[(size_t)c] += X[r * C + c];
    for (int c = 0; c < C; ++c) (*mean)[(size_t)c] /= T(rows);
    for (int64_t r = 0; r < rows; ++r)
      for (int c = 0; c < C; ++c) {
        const T d = X[r * C + c] - (*mean)[(size_t)c];
        var[(size_t)c] += d * d;
      }
    for (int c = 0; c < C; ++c) {
      var[(size_t)c] /= T(rows);
      (*invstd)[(size_t)c] = T(1) / std::sqrt(var[(size_t)c] + eps);
    }
    for (int64_t r = 0; r < rows; ++r)
      for (int c = 0; c < C; ++c) {
        const T xh = (X[r * C + c] - (*mean)[(size_t)c]) * (*invstd)[(size_t)c];
        (*xhat)[r * C + c] = xh;
        out[r * C + c] = G[c] * xh + Bt[c];
      }
    // running stats track the unbiased variance
    const T unbias = rows > 1 ? T(rows) / T(rows - 1) : T(1);
    for (int c = 0; c < C; ++c) {
      (*run_mean)[c] = (T(1) - momentum) * (*run_mean)[c] + momentum * (*mean)[(size_t)c];
      (*run_var)[c] = (T(1) - momentum) * (*run_var)[c] + momentum * var[(size_t)c] * unbias;
    }

    const int y = leaf_result(std::move(out), requires_grad(x) || requires_grad(gamma) || requires_grad(beta));
    if (!nodes_[(size_t)y].requires_grad) return y;
    nodes_[(size_t)y].back = [this, y, x, gamma, beta, rows, C, xhat, invstd]() {
      const Tensor<T>& g = nodes_[(size_t)y].grad;
      const Tensor<T>& G = val(gamma);
      if (requires_grad(beta)) {
        Tensor<T>& gb = ensure_grad(beta);
        for (int64_t r = 0; r < rows; ++r)
          for (int c = 0; c < C; ++c) gb[c] += g[r * C + c];
      }
      if (requires_grad(gamma)) {
        Tensor<T>& gg = ensure_grad(gamma);
        for (int64_t r = 0; r < rows; ++r)
          for (int c = 0; c < C; ++c) gg[c] += g[r * C + c] * (*xhat)[r * C + c];
      }
      if (requires_grad(x)) {
        Tensor<T>& gx = ensure_grad(x);
        std::vector<T> mean_dxh((size_t)C, T(0)), mean_dxh_xh((size_t)C, T(0));
        for (int64_t r = 0; r < rows; ++r)
          for (int c = 0; c < C; ++c) {
            const T dxh = g[r * C + c] * G[c];
            mean_dxh[(size_t)c] += dxh;
            mean_dxh_xh[(size_t)c] += dxh * (*xhat)[r * C + c];
          }
        for (int c = 0; c < C; ++c) {
          mean_dxh[(size_t)c] /= T(rows);
          mean_dxh_xh[(size_t)c] /= T(rows);
        }
        for (int64_t r = 0; r < rows; ++r)
          for (int c = 0; c < C; ++c) {
            const T dxh = g[r * C + c] * G[c];
            gx[r * C + c] += (*invstd)[(size_t)c] *
                             (dxh - mean_dxh[(size_t)c] - (*xhat)[r * C + c] * mean_dxh_xh[(size_t)c]);
          }
      }
    };
    return y;
  }

  int softmax_last(int x) {
    const Tensor<T>& X = val(x);
    const int D = X.dim(X.rank() - 1);
    const int64_t rows = X.numel() / D;
    Tensor<T> out(X.shape);
    for (int64_t r = 0; r < rows; ++r) {
      const T* xr = X.ptr() + r * D;
      T* yr = out.ptr() + r * D;
      T m = xr[0];
      for (int d = 1; d < D; ++d) m = std::max(m, xr[d]);
      T sum = 0;
      for (int d = 0; d < D; ++d) {
        yr[d] = std::exp(xr[d] - m);
        sum += yr[d];
      }
      for (int d = 0; d < D; ++d) yr[d] /= sum;
    }
    return unary(std::move(out), x, [this, rows, D](int y, int x2) {
      const Tensor<T>& g = nodes_[(size_t)y].grad;
      const Tensor<T>& s = nodes_[(size_t)y].val;
      Tensor<T>& gx = ensure_grad(x2);
      for (int64_t r = 0; r < rows; ++r) {
        T dot = 0;
        for (int d = 0; d < D; ++d) dot += g[r * D + d] * s[r * D + d];
        for (int d = 0; d < D; ++d) gx[r * D + d] += s[r * D + d] * (g[r * D + d] - dot);
      }
    });
  }

  // ---- convolution / pooling / resampling ----

  /// x [B, H, W, Cin], w [kh, kw, Cin, Cout], b [Cout] or -1. Zero padding.
  int conv2d(int x, int w, int b, int stride, int pad) {
    const Tensor<T>& X = val(x);
    const Tensor<T>& W = val(w);
    const int B = X.dim(0), H = X.dim(1), Wd = X.dim(2), Cin = X.dim(3);
    const int kh = W.dim(0), kw = W.dim(1), Cout = W.dim(3);
    if (W.dim(2) != Cin) throw std::logic_error("conv2d: channel mismatch");
    const int oh = (H + 2 * pad - kh) / stride + 1;
    const int ow = (Wd + 2 * pad - kw) / stride + 1;
    if (oh < 1 || ow < 1) throw std::logic_error("conv2d: output underflow");

    const int patch = kh * kw * Cin;
    auto col = std::make_shared<Tensor<T>>(std::vector<int>{B * oh * ow, patch});
    int64_t row = 0;
    for (int bb = 0; bb < B; ++bb)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox, ++row) {
          T* dst = col->ptr() + row * patch;
          for (int ky = 0; ky < kh; ++ky) {
            const int iy = oy * stride - pad + ky;
            for (int kx = 0; kx < kw; ++kx) {
              const int ix = ox * stride - pad + kx;
              T* cell = dst + (ky * kw + kx) * Cin;
              if (iy < 0 || iy >= H || ix < 0 || ix >= Wd) {
                std::fill_n(cell, Cin, T(0));
              } else {
                std::copy_n(X.ptr() + (((int64_t)bb * H + iy) * Wd + ix) * Cin, Cin, cell);
              }
            }
          }
        }

    Tensor<T> out({B, oh, ow, Cout});
    as_matrix(out, (int64_t)B * oh * ow, Cout).noalias() =
        as_matrix(*col, (int64_t)B * oh * ow, patch) * as_matrix(W, patch, Cout);
    if (b >= 0) {
      const Tensor<T>& Bi = val(b);
      MatMap<T> O = as_matrix(out, (int64_t)B * oh * ow, Cout);
      O.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(Bi.ptr(), Cout);
    }

    const int y = leaf_result(std::move(out), requires_grad(x) || requires_grad(w) || (b >= 0 && requires_grad(b)));
    if (!nodes_[(size_t)y].requires_grad) return y;
    nodes_[(size_t)y].back = [this, y, x, w, b, col, B, H, Wd, Cin, kh, kw, Cout, oh, ow, stride, pad, patch]() {
      const Tensor<T>& g = nodes_[(size_t)y].grad;
      ConstMatMap<T> G(g.ptr(), (int64_t)B * oh * ow, Cout);
      if (requires_grad(w)) {
        MatMap<T> GW(ensure_grad(w).ptr(), patch, Cout);
        GW.noalias() += as_matrix(*col, (int64_t)B * oh * ow, patch).transpose() * G;
      }
      if (b >= 0 && requires_grad(b)) {
        Tensor<T>& gb = ensure_grad(b);
        Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(gb.ptr(), Cout) += G.colwise().sum();
      }
      if (requires_grad(x)) {
        RowMat<T> dcol = G * as_matrix(val(w), patch, Cout).transpose();
        Tensor<T>& gx = ensure_grad(x);
        int64_t row2 = 0;
        for (int bb = 0; bb < B; ++bb)
          for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox, ++row2) {
              const T* src = dcol.data() + row2 * patch;
              for (int ky = 0; ky < kh; ++ky) {
                const int iy = oy * stride - pad + ky;
                if (iy < 0 || iy >= H) continue;
                for (int kx = 0; kx < kw; ++kx) {
                  const int ix = ox * stride - pad + kx;
                  if (ix < 0 || ix >= Wd) continue;
                  T* dst = gx.ptr() + (((int64_t)bb * H + iy) * Wd + ix) * Cin;
                  const T* cell = src + (ky * kw + kx) * Cin;
                  for (int c = 0; c < Cin; ++c) dst[c] += cell[c];
                }
              }
            }
      }
    };
    return y;
  }

  /// 3x3 stride-2 max pool with pad 1 (ResNet stem convention).
  int maxpool3x3s2(int x) {
    const Tensor<T>& X = val(x);
    const int B = X.dim(0), H = X.dim(1), Wd = X.dim(2), C = X.dim(3);
    const int oh = (H + 2 - 3) / 2 + 1, ow = (Wd + 2 - 3) / 2 + 1;
    Tensor<T> out({B, oh, ow, C});
    auto arg = std::make_shared<std::vector<int64_t>>((size_t)out.numel());
    int64_t o = 0;
    for (int bb = 0; bb < B; ++bb)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox)
          for (int c = 0; c < C; ++c, ++o) {
            T best = -std::numeric_limits<T>::infinity();
            int64_t best_idx = -1;
            for (int ky = 0; ky < 3; ++ky) {
              const int iy = oy * 2 - 1 + ky;
              if (iy < 0 || iy >= H) continue;
              for (int kx = 0; kx < 3; ++kx) {
                const int ix = ox * 2 - 1 + kx;
                if (ix < 0 || ix >= Wd) continue;
                const int64_t idx = (((int64_t)bb * H + iy) * Wd + ix) * C + c;
                if (X[idx] > best) {
                  best = X[idx];
                  best_idx = idx;
                }
              }
            }
            out[o] = best;
            (*arg)[(size_t)o] = best_idx;
          }
    return unary(std::move(out), x, [this, arg](int y, int x2) {
      const Tensor<T>& g = nodes_[(size_t)y].grad;
      Tensor<T>& gx = ensure_grad(x2);
      for (int64_t i = 0; i < g.numel(); ++i) gx[(*arg)[(size_t)i]] += g[i];
    });
  }

  /// [B, C] channel means over the spatial extent.
  int gap2d(int x) {
    const Tensor<T>& X = val(x);
    const int B = X.dim(0), H = X.dim(1), Wd = X.dim(2), C = X.dim(3);
    Tensor<T> out({B, C});
    const T inv = T(1) / T(H * Wd);
    for (int bb = 0; bb < B; ++bb)
      for (int64_t p = 0; p < (int64_t)H * Wd; ++p)
        for (int c = 0; c < C; ++c) out[bb * C + c] += X[((int64_t)bb * H * Wd + p) * C + c];
    for (auto& v : out.data) v *= inv;
    return unary(std::move(out), x, [this, B, H, Wd, C, inv](int y, int x2) {
      const Tensor<T>& g = nodes_[(size_t)y].grad;
      Tensor<T>& gx = ensure_grad(x2);
      for (int bb = 0; bb < B; ++bb)
        for (int64_t p = 0; p < (int64_t)H * Wd; ++p)
          for (int c = 0; c < C; ++c) gx[((int64_t)bb * H * Wd + p) * C + c] += g[bb * C + c] * inv;
    });
  }

  /// x [B, H, W, C] scaled per channel by s [B, C].
  int channel_scale(int x, int s) {
    const Tensor<T>& X = val(x);
    const Tensor<T>& S = val(s);
    const int B = X.dim(0), H = X.dim(1), Wd = X.dim(2), C = X.dim(3);
    if (S.dim(0) != B || S.dim(1) != C) throw std::logic_error("channel_scale: gate shape");
    Tensor<T> out = X;
    for (int bb = 0; bb < B; ++bb)
      for (int64_t p = 0; p < (int64_t)H * Wd; ++p)
        for (int c = 0; c < C; ++c) out[((int64_t)bb * H * Wd + p) * C + c] *= S[bb * C + c];
    return unary_or_binary(std::move(out), x, s, [this, B, H, Wd, C](int y, int x2, int s2) {
      const Tensor<T>& g = nodes_[(size_t)y].grad;
      if (requires_grad(x2)) {
        Tensor<T>& gx = ensure_grad(x2);
        const Tensor<T>& S = val(s2);
        for (int bb = 0; bb < B; ++bb)
          for (int64_t p = 0; p < (int64_t)H * Wd; ++p)
            for (int c = 0; c < C; ++c)
              gx[((int64_t)bb * H * Wd + p) * C + c] += g[((int64_t)bb * H * Wd + p) * C + c] * S[bb * C + c];
      }
      if (requires_grad(s2)) {
        Tensor<T>& gs = ensure_grad(s2);
        const Tensor<T>& X = val(x2);
        for (int bb = 0; bb < B; ++bb)
          for (int64_t p = 0; p < (int64_t)H * Wd; ++p)
            for (int c = 0; c < C; ++c)
              gs[bb * C + c] += g[((int64_t)bb * H * Wd + p) * C + c] * X[((int64_t)bb * H * Wd + p) * C + c];
      }
    });
  }

  /// Bilinear resize [B, h, w, C] -> [B, oh, ow, C], half-pixel centers,
  /// borders clamped.
  int bilinear_upsample(int x, int oh, int ow) {
    const Tensor<T>& X = val(x);
    const int B = X.dim(0), H = X.dim(1), Wd = X.dim(2), C = X.dim(3);
    const double sy = (double)H / oh, sx = (double)Wd / ow;
    struct Mix {
      int lo;
      T w_hi;
    };
    auto ymix = std::make_shared<std::vector<Mix>>((size_t)oh);
    auto xmix = std::make_shared<std::vector<Mix>>((size_t)ow);
    auto fill_mix = [](std::vector<Mix>& m, int out_n, double scale, int in_n) {
      for (int i = 0; i < out_n; ++i) {
        double src = (i + 0.5) * scale - 0.5;
        if (src < 0) src = 0;
        if (src > in_n - 1) src = in_n - 1;
        const int lo = std::min((int)src, in_n - 1);
        m[(size_t)i] = {lo, (T)(src - lo)};
      }
    };
    fill_mix(*ymix, oh, sy, H);
    fill_mix(*xmix, ow, sx, Wd);

    Tensor<T> out({B, oh, ow, C});
    for (int bb = 0; bb < B; ++bb)
      for (int oy = 0; oy < oh; ++oy) {
        const auto [y0, wy] = (*ymix)[(size_t)oy];
        const int y1 = std::min(y0 + 1, H - 1);
        for (int ox = 0; ox < ow; ++ox) {
          const auto [x0, wx] = (*xmix)[(size_t)ox];
          const int x1 = std::min(x0 + 1, Wd - 1);
          const T* p00 = X.ptr() + (((int64_t)bb * H + y0) * Wd + x0) * C;
          const T* p01 = X.ptr() + (((int64_t)bb * H + y0) * Wd + x1) * C;
          const T* p10 = X.ptr() + (((int64_t)bb * H + y1) * Wd + x0) * C;
          const T* p11 = X.ptr() + (((int64_t)bb * H + y1) * Wd + x1) * C;
          T* dst = out.ptr() + (((int64_t)bb * oh + oy) * ow + ox) * C;
          for (int c = 0; c < C; ++c)
            dst[c] = (T(1) - wy) * ((T(1) - wx) * p00[c] + wx * p01[c]) + wy * ((T(1) - wx) * p10[c] + wx * p11[c]);
        }
      }
    return unary(std::move(out), x, [this, B, H, Wd, C, oh, ow, ymix, xmix](int y, int x2) {
      const Tensor<T>& g = nodes_[(size_t)y].grad;
      Tensor<T>& gx = ensure_grad(x2);
      for (int bb = 0; bb < B; ++bb)
        for (int oy = 0; oy < oh; ++oy) {
          const auto [y0, wy] = (*ymix)[(size_t)oy];
          const int y1 = std::min(y0 + 1, H - 1);
          for (int ox = 0; ox < ow; ++ox) {
            const auto [x0, wx] = (*xmix)[(size_t)ox];
            const int x1 = std::min(x0 + 1, Wd - 1);
            const T* src = g.ptr() + (((int64_t)bb * oh + oy) * ow + ox) * C;
            T* p00 = gx.ptr() + (((int64_t)bb * H + y0) * Wd + x0) * C;
            T* p01 = gx.ptr() + (((int64_t)bb * H + y0) * Wd + x1) * C;
            T* p10 = gx.ptr() + (((int64_t)bb * H + y1) * Wd + x0) * C;
            T* p11 = gx.ptr() + (((int64_t)bb * H + y1) * Wd + x1) * C;
            for (int c = 0; c < C; ++c) {
              p00[c] += (T(1) - wy) * (T(1) - wx) * src[c];
              p01[c] += (T(1) - wy) * wx * src[c];
              p10[c] += wy * (T(1) - wx) * src[c];
              p11[c] += wy * wx * src[c];
            }
          }
        }
    });
  }

  // ---- deformable attention ----

  /// locs = refs + offsets / (grid_w_l, grid_h_l).
  /// offsets [B, n, Hh, L, K, 2] (x, y order), refs [n, 2].
  int make_sample_locs(int offsets, const Tensor<T>& refs, const std::vector<LevelSpec>& levels) {
    const Tensor<T>& O = val(offsets);
    const int B = O.dim(0), n = O.dim(1), Hh = O.dim(2), L = O.dim(3), K = O.dim(4);
    if ((int)levels.size() != L) throw std::logic_error("make_sample_locs: level count");
    if (refs.dim(0) != n || refs.dim(1) != 2) throw std::logic_error("make_sample_locs: refs shape");
    Tensor<T> out(O.shape);
    auto lv = std::make_shared<std::vector<LevelSpec>>(levels);
    int64_t i = 0;
    for (int bb = 0; bb < B; ++bb)
      for (int q = 0; q < n; ++q)
        for (int h = 0; h < Hh; ++h)
          for (int l = 0; l < L; ++l) {
            const T inv_w = T(1) / T(levels[(size_t)l].grid_w);
            const T inv_h = T(1) / T(levels[(size_t)l].grid_h);
            for (int k = 0; k < K; ++k, i += 2) {
              out[i] = refs[q * 2] + O[i] * inv_w;
              out[i + 1] = refs[q * 2 + 1] + O[i + 1] * inv_h;
            }
          }
    return unary(std::move(out), offsets, [this, B, n, Hh, L, K, lv](int y, int o2) {
      const Tensor<T>& g = nodes_[(size_t)y].grad;
      Tensor<T>& go = ensure_grad(o2);
      int64_t i = 0;
      for (int bb = 0; bb < B; ++bb)
        for (int q = 0; q < n; ++q)
          for (int h = 0; h < Hh; ++h)
            for (int l = 0; l < L; ++l) {
              const T inv_w = T(1) / T((*lv)[(size_t)l].grid_w);
              const T inv_h = T(1) / T((*lv)[(size_t)l].grid_h);
              for (int k = 0; k < K; ++k, i += 2) {
                go[i] += g[i] * inv_w;
                go[i + 1] += g[i + 1] * inv_h;
              }
            }
    });
  }

  /// Multi-scale deformable attention core.
  ///   values  [B, m, D]  value-projected multi-scale tokens
  ///   locs    [B, n, Hh, L, K, 2]  normalized (x, y) sampling points
  ///   weights [B, n, Hh, L, K]  softmax-normalized per (query, head)
  /// Output [B, n, D]. Sampling is bilinear with zero padding outside the
  /// unit square; gradients flow to values, locations, and weights.
  int ms_attend(int values, int locs, int weights, const std::vector<LevelSpec>& levels, int heads) {
    const Tensor<T>& V = val(values);
    const Tensor<T>& P = val(locs);
    const Tensor<T>& Wt = val(weights);
    const int B = V.dim(0), m = V.dim(1), D = V.dim(2);
    const int n = P.dim(1), Hh = P.dim(2), L = P.dim(3), K = P.dim(4);
    if (Wt.dim(1) != n || Wt.dim(2) != Hh || Wt.dim(3) != L || Wt.dim(4) != K)
      throw std::logic_error("ms_attend: weight shape");
    if ((int)levels.size() != L) throw std::logic_error("ms_attend: level count");
    if (D % heads != 0 || heads != Hh) throw std::logic_error("ms_attend: head mismatch");
    const int hd = D / heads;
    int total = 0;
    for (const auto& l : levels) total += l.grid_h * l.grid_w;
    if (total != m) throw std::logic_error("ms_attend: token count mismatch");

    // sampled head-vectors are kept for the backward pass
    auto sampled = std::make_shared<Tensor<T>>(std::vector<int>{B, n, Hh, L, K, hd});
    Tensor<T> out({B, n, D});
    auto lv = std::make_shared<std::vector<LevelSpec>>(levels);

    auto corner = [&](int bb, const LevelSpec& ls, int yy, int xx) -> const T* {
      if (yy < 0 || yy >= ls.grid_h || xx < 0 || xx >= ls.grid_w) return nullptr;
      return V.ptr() + (((int64_t)bb * m) + ls.token_offset + yy * ls.grid_w + xx) * D;
    };

    for (int bb = 0; bb < B; ++bb)
      for (int q = 0; q < n; ++q)
        for (int h = 0; h < Hh; ++h)
          for (int l = 0; l < L; ++l) {
            const LevelSpec& ls = levels[(size_t)l];
            for (int k = 0; k < K; ++k) {
              const int64_t pi = ((((int64_t)bb * n + q) * Hh + h) * L + l) * K + k;
              const T px = P[pi * 2], py = P[pi * 2 + 1];
              const T cx = px * T(ls.grid_w) - T(0.5);
              const T cy = py * T(ls.grid_h) - T(0.5);
              const int x0 = (int)std::floor(cx), y0 = (int)std::floor(cy);
              const T tx = cx - T(x0), ty = cy - T(y0);
              const T* c00 = corner(bb, ls, y0, x0);
              const T* c01 = corner(bb, ls, y0, x0 + 1);
              const T* c10 = corner(bb, ls, y0 + 1, x0);
              const T* c11 = corner(bb, ls, y0 + 1, x0 + 1);
              T* s = sampled->ptr() + pi * hd;
              const T w_q = Wt[pi];
              T* o = out.ptr() + ((int64_t)bb * n + q) * D + h * hd;
              for (int d = 0; d < hd; ++d) {
                const T v00 = c00 ? c00[h * hd + d] : T(0);
                const T v01 = c01 ? c01[h * hd + d] : T(0);
                const T v10 = c10 ? c10[h * hd + d] : T(0);
                const T v11 = c11 ? c11[h * hd + d] : T(0);
                const T sv = (T(1) - ty) * ((T(1) - tx) * v00 + tx * v01) + ty * ((T(1) - tx) * v10 + tx * v11);
                s[d] = sv;
                o[d] += w_q * sv;
              }
            }
          }

    bool rg = requires_grad(values) || requires_grad(locs) || requires_grad(weights);
    const int y = leaf_result(std::move(out), rg);
    if (!rg) return y;
    nodes_[(size_t)y].back = [this, y, values, locs, weights, lv, sampled, B, m, D, n, Hh, L, K, hd]() {
      const Tensor<T>& g = nodes_[(size_t)y].grad;
      const Tensor<T>& V = val(values);
      const Tensor<T>& P = val(locs);
      const Tensor<T>& Wt = val(weights);
      Tensor<T>* gv = requires_grad(values) ? &ensure_grad(values) : nullptr;
      Tensor<T>* gp = requires_grad(locs) ? &ensure_grad(locs) : nullptr;
      Tensor<T>* gw = requires_grad(weights) ? &ensure_grad(weights) : nullptr;

      for (int bb = 0; bb < B; ++bb)
        for (int q = 0; q < n; ++q)
          for (int h = 0; h < Hh; ++h)
            for (int l = 0; l < L; ++l) {
              const LevelSpec& ls = (*lv)[(size_t)l];
              for (int k = 0; k < K; ++k) {
                const int64_t pi = ((((int64_t)bb * n + q) * Hh + h) * L + l) * K + k;
                const T px = P[pi * 2], py = P[pi * 2 + 1];
                const T cx = px * T(ls.grid_w) - T(0.5);
                const T cy = py * T(ls.grid_h) - T(0.5);
                const int x0 = (int)std::floor(cx), y0 = (int)std::floor(cy);
                const T tx = cx - T(x0), ty = cy - T(y0);
                const T w_q = Wt[pi];
                const T* go = g.ptr() + ((int64_t)bb * n + q) * D + h * hd;
                const T* s = sampled->ptr() + pi * hd;

                if (gw) {
                  T acc = 0;
                  for (int d = 0; d < hd; ++d) acc += go[d] * s[d];
                  (*gw)[pi] += acc;
                }

                auto vcell = [&](int yy, int xx) -> const T* {
                  if (yy < 0 || yy >= ls.grid_h || xx < 0 || xx >= ls.grid_w) return nullptr;
                  return V.ptr() + (((int64_t)bb * m) + ls.token_offset + yy * ls.grid_w + xx) * D + h * hd;
                };
                auto gcell = [&](int yy, int xx) -> T* {
                  if (!gv || yy < 0 || yy >= ls.grid_h || xx < 0 || xx >= ls.grid_w) return nullptr;
                  return gv->ptr() + (((int64_t)bb * m) + ls.token_offset + yy * ls.grid_w + xx) * D + h * hd;
                };

                const T* v00 = vcell(y0, x0);
                const T* v01 = vcell(y0, x0 + 1);
                const T* v10 = vcell(y0 + 1, x0);
                const T* v11 = vcell(y0 + 1, x0 + 1);

                if (gv) {
                  T* g00 = gcell(y0, x0);
                  T* g01 = gcell(y0, x0 + 1);
                  T* g10 = gcell(y0 + 1, x0);
                  T* g11 = gcell(y0 + 1, x0 + 1);
                  for (int d = 0; d < hd; ++d) {
                    const T go_w = go[d] * w_q;
                    if (g00) g00[d] += go_w * (T(1) - ty) * (T(1) - tx);
                    if (g01) g01[d] += go_w * (T(1) - ty) * tx;
                    if (g10) g10[d] += go_w * ty * (T(1) - tx);
                    if (g11) g11[d] += go_w * ty * tx;
                  }
                }
                if (gp) {
                  T dcx = 0, dcy = 0;
                  for (int d = 0; d < hd; ++d) {
                    const T a00 = v00 ? v00[d] : T(0);
                    const T a01 = v01 ? v01[d] : T(0);
                    const T a10 = v10 ? v10[d] : T(0);
                    const T a11 = v11 ? v11[d] : T(0);
                    const T dsv_dx = (T(1) - ty) * (a01 - a00) + ty * (a11 - a10);
                    const T dsv_dy = (T(1) - tx) * (a10 - a00) + tx * (a11 - a01);
                    dcx += go[d] * w_q * dsv_dx;
                    dcy += go[d] * w_q * dsv_dy;
                  }
                  (*gp)[pi * 2] += dcx * T(ls.grid_w);
                  (*gp)[pi * 2 + 1] += dcy * T(ls.grid_h);
                }
              }
            }
    };
    return y;
  }

  // ---- reductions / losses ----

  int sum_all(int x) {
    const Tensor<T>& X = val(x);
    T acc = 0;
    for (const auto& v : X.data) acc += v;
    return unary(Tensor<T>::scalar(acc), x, [this](int y, int x2) {
      const T g = nodes_[(size_t)y].grad[0];
      Tensor<T>& gx = ensure_grad(x2);
      for (auto& v : gx.data) v += g;
    });
  }

  int mean_all(int x) {
    const int64_t n = val(x).numel();
    return scale(sum_all(x), T(1) / T(n));
  }

  /// Mean cross-entropy over rows of logits [N, K] against integer labels.
  int softmax_xent_mean(int logits, const std::vector<int>& labels) {
    const Tensor<T>& X = val(logits);
    const int K = X.dim(X.rank() - 1);
    const int64_t N = X.numel() / K;
    if ((int64_t)labels.size() != N) throw std::logic_error("xent: label count mismatch");
    auto probs = std::make_shared<Tensor<T>>(std::vector<int>{(int)N, K});
    T loss = 0;
    for (int64_t r = 0; r < N; ++r) {
      const int yv = labels[(size_t)r];
      if (yv < 0 || yv >= K) throw std::out_of_range("xent: class index out of range");
      const T* xr = X.ptr() + r * K;
      T m = xr[0];
      for (int d = 1; d < K; ++d) m = std::max(m, xr[d]);
      T sum = 0;
      for (int d = 0; d < K; ++d) {
        const T e = std::exp(xr[d] - m);
        (*probs)[r * K + d] = e;
        sum += e;
      }
      for (int d = 0; d < K; ++d) (*probs)[r * K + d] /= sum;
      loss += m + std::log(sum) - xr[yv];
    }
    loss /= T(N);
    auto labs = std::make_shared<std::vector<int>>(labels);
    return unary(Tensor<T>::scalar(loss), logits, [this, probs, labs, N, K](int y, int x2) {
      const T g = nodes_[(size_t)y].grad[0];
      Tensor<T>& gx = ensure_grad(x2);
      const T inv = g / T(N);
      for (int64_t r = 0; r < N; ++r) {
        for (int d = 0; d < K; ++d) gx[r * K + d] += inv * (*probs)[r * K + d];
        gx[r * K + (*labs)[(size_t)r]] -= inv;
      }
    });
  }

 private:
  std::vector<Node> nodes_;

  static int64_t prod(const std::vector<int>& s, int from, int to) {
    int64_t p = 1;
    for (int i = from; i < to; ++i) p *= s[(size_t)i];
    return p;
  }

  void check_same(int a, int b, const char* op) const {
    if (!val(a).same_shape(val(b)))
      throw std::logic_error(std::string(op) + ": shape mismatch " + val(a).shape_str() + " vs " + val(b).shape_str());
  }

  Tensor<T>& ensure_grad(int id) {
    Node& n = nodes_[(size_t)id];
    if (!n.has_grad) {
      n.grad = Tensor<T>::zeros(n.val.shape);
      n.has_grad = true;
    }
    return n.grad;
  }

  void accumulate(int id, const Tensor<T>& g) {
    Tensor<T>& dst = ensure_grad(id);
    for (int64_t i = 0; i < g.numel(); ++i) dst[i] += g[i];
  }

  int leaf_result(Tensor<T> v, bool rg) {
    Node n;
    n.val = std::move(v);
    n.requires_grad = rg;
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  template <typename F>
  int unary(Tensor<T> out, int a, F&& f) {
    const int y = leaf_result(std::move(out), requires_grad(a));
    if (nodes_[(size_t)y].requires_grad)
      nodes_[(size_t)y].back = [this, y, a, f = std::forward<F>(f)]() { f(y, a); };
    return y;
  }

  template <typename F>
  int unary_or_binary(Tensor<T> out, int a, int b, F&& f) {
    const int y = leaf_result(std::move(out), requires_grad(a) || requires_grad(b));
    if (nodes_[(size_t)y].requires_grad)
      nodes_[(size_t)y].back = [this, y, a, b, f = std::forward<F>(f)]() { f(y, a, b); };
    return y;
  }
};

}  // namespace unirgbir
