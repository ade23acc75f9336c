#pragma once

#include "unirgbir/tensor.hpp"

#include <deque>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace unirgbir {

/// One named model parameter. `frozen` marks membership in the untouched
/// set; `stat` marks normalization statistics that are updated by forward
/// passes rather than the optimizer (checkpointed, never given gradients).
template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;  // allocated on first use
  bool frozen = false;
  bool stat = false;

  void ensure_grad() {
    if (grad.data.empty()) grad = Tensor<T>::zeros(value.shape);
  }
  void zero_grad() {
    if (!grad.data.empty()) grad.fill(T(0));
  }
};

/// Registry of every parameter in a model, in construction order. Addresses
/// are stable; modules keep Param pointers.
template <typename T>
class ParamStore {
 public:
  Param<T>* add(const std::string& name, Tensor<T> value) {
    if (index_.count(name)) throw std::logic_error("duplicate parameter name: " + name);
    params_.push_back(Param<T>{name, std::move(value), {}, false, false});
    index_[name] = params_.size() - 1;
    return &params_.back();
  }

  Param<T>* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &params_[it->second];
  }
  const Param<T>* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &params_[it->second];
  }

  Param<T>& at(const std::string& name) {
    Param<T>* p = find(name);
    if (!p) throw std::out_of_range("no such parameter: " + name);
    return *p;
  }

  size_t size() const { return params_.size(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  int64_t total_count() const {
    int64_t n = 0;
    for (const auto& p : params_) n += p.value.numel();
    return n;
  }

  void zero_grads() {
    for (auto& p : params_) p.zero_grad();
  }

 private:
  std::deque<Param<T>> params_;
  std::unordered_map<std::string, size_t> index_;
};

enum class TuneMode { adapter, full };

/// Disjoint, exhaustive split of all parameters into the frozen and the
/// trainable set.
struct ParamPartition {
  std::vector<std::string> theta_v;
  std::vector<std::string> theta_a;
  int64_t count_v = 0;
  int64_t count_a = 0;

  int64_t total() const { return count_v + count_a; }
  double trainable_fraction() const {
    return total() == 0 ? 0.0 : (double)count_a / (double)total();
  }
};

/// Partitions by the frozen flag (adapter) or declares everything trainable
/// (full). Fails hard on a parameter outside the known module namespaces so
/// nothing can train unaccounted.
template <typename T>
ParamPartition make_partition(const ParamStore<T>& store, TuneMode mode) {
  static const char* kKnown[] = {"backbone.", "head.", "mfp.", "sfi.", "inject."};
  ParamPartition part;
  for (const auto& p : store) {
    bool known = false;
    for (const char* pre : kKnown)
      if (p.name.rfind(pre, 0) == 0) known = true;
    if (!known) throw std::logic_error("unregistered parameter namespace: " + p.name);
    const bool frozen = mode == TuneMode::adapter && p.frozen;
    if (frozen) {
      part.theta_v.push_back(p.name);
      part.count_v += p.value.numel();
    } else {
      part.theta_a.push_back(p.name);
      part.count_a += p.value.numel();
    }
  }
  return part;
}

}  // namespace unirgbir
