#pragma once

#include "unirgbir/graph.hpp"
#include "unirgbir/params.hpp"
#include "unirgbir/rng.hpp"

#include <string>
#include <unordered_map>

namespace unirgbir {

/// Maps parameters onto graph leaves for one forward pass. Each parameter
/// is bound at most once per graph; gradients are read back afterwards.
/// When `train_all` is set even frozen parameters request gradients
/// (full fine-tuning); otherwise frozen weights only pass gradients
/// through, never accumulate them.
template <typename T>
class Binder {
 public:
  Binder(Graph<T>& g, bool train_all = false) : g_(g), train_all_(train_all) {}

  int operator()(Param<T>* p) {
    auto it = bound_.find(p);
    if (it != bound_.end()) return it->second;
    const bool rg = !p->stat && (train_all_ || !p->frozen);
    const int id = g_.leaf(p->value, rg);
    bound_.emplace(p, id);
    return id;
  }

  /// Accumulates graph leaf gradients into the parameter store.
  void read_grads() {
    for (auto& [p, id] : bound_) {
      if (!g_.has_grad(id)) continue;
      p->ensure_grad();
      const Tensor<T>& src = g_.grad(id);
      for (int64_t i = 0; i < src.numel(); ++i) p->grad[i] += src[i];
    }
  }

  Graph<T>& graph() { return g_; }

 private:
  Graph<T>& g_;
  bool train_all_;
  std::unordered_map<Param<T>*, int> bound_;
};

template <typename T>
struct LinearM {
  Param<T>* w = nullptr;  // [din, dout]
  Param<T>* b = nullptr;

  void init(ParamStore<T>& store, const std::string& name, int din, int dout, Rng& rng,
            double std = 0.02, bool zero_weight = false, bool bias = true) {
    Tensor<T> wt({din, dout});
    if (!zero_weight) rng.fill_trunc_normal(wt, std);
    w = store.add(name + ".weight", std::move(wt));
    if (bias) b = store.add(name + ".bias", Tensor<T>::zeros({dout}));
  }

  int forward(Binder<T>& bind, int x) {
    return bind.graph().linear(x, bind(w), b ? bind(b) : -1);
  }
};

template <typename T>
struct Conv2dM {
  Param<T>* w = nullptr;  // [kh, kw, cin, cout]
  Param<T>* b = nullptr;
  int stride = 1;
  int pad = 0;

  void init(ParamStore<T>& store, const std::string& name, int kh, int kw, int cin, int cout,
            int stride_, int pad_, Rng& rng, double std = -1.0) {
    stride = stride_;
    pad = pad_;
    Tensor<T> wt({kh, kw, cin, cout});
    const double s = std > 0 ? std : std::sqrt(2.0 / (kh * kw * cin));
    rng.fill_normal(wt, s);
    w = store.add(name + ".weight", std::move(wt));
    b = store.add(name + ".bias", Tensor<T>::zeros({cout}));
  }

  int forward(Binder<T>& bind, int x) {
    return bind.graph().conv2d(x, bind(w), b ? bind(b) : -1, stride, pad);
  }
};

template <typename T>
struct LayerNormM {
  Param<T>* gamma = nullptr;
  Param<T>* beta = nullptr;
  T eps = T(1e-6);

  void init(ParamStore<T>& store, const std::string& name, int dim) {
    gamma = store.add(name + ".gamma", Tensor<T>::full({dim}, T(1)));
    beta = store.add(name + ".beta", Tensor<T>::zeros({dim}));
  }

  int forward(Binder<T>& bind, int x) {
    return bind.graph().layernorm(x, bind(gamma), bind(beta), eps);
  }
};

template <typename T>
struct BatchNormM {
  Param<T>* gamma = nullptr;
  Param<T>* beta = nullptr;
  Param<T>* run_mean = nullptr;  // stat
  Param<T>* run_var = nullptr;   // stat
  T momentum = T(0.1);
  T eps = T(1e-5);

  void init(ParamStore<T>& store, const std::string& name, int dim) {
    gamma = store.add(name + ".gamma", Tensor<T>::full({dim}, T(1)));
    beta = store.add(name + ".beta", Tensor<T>::zeros({dim}));
    run_mean = store.add(name + ".running_mean", Tensor<T>::zeros({dim}));
    run_mean->stat = true;
    run_var = store.add(name + ".running_var", Tensor<T>::full({dim}, T(1)));
    run_var->stat = true;
  }

  int forward(Binder<T>& bind, int x, bool training) {
    return bind.graph().batchnorm(x, bind(gamma), bind(beta), &run_mean->value, &run_var->value,
                                  training, momentum, eps);
  }
};

}  // namespace unirgbir
