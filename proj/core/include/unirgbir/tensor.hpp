#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace unirgbir {

/// Dense row-major tensor of rank 1..6. Feature maps are laid out
/// [B, H, W, C], token streams [B, n, D].
template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(static_cast<size_t>(count(shape)), T(0)) {}
  Tensor(std::vector<int> s, T fill) : shape(std::move(s)), data(static_cast<size_t>(count(shape)), fill) {}

  static int64_t count(const std::vector<int>& s) {
    if (s.empty()) throw std::invalid_argument("tensor rank must be >= 1");
    int64_t n = 1;
    for (int d : s) {
      if (d <= 0) throw std::invalid_argument("tensor dims must be positive");
      n *= d;
    }
    return n;
  }

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<int> s, T v) { return Tensor(std::move(s), v); }
  static Tensor scalar(T v) { return Tensor({1}, v); }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  T& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  Tensor reshaped(std::vector<int> s) const {
    if (count(s) != numel()) throw std::invalid_argument("reshape changes element count");
    Tensor out;
    out.shape = std::move(s);
    out.data = data;
    return out;
  }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  std::string shape_str() const {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
      if (i) s += "x";
      s += std::to_string(shape[i]);
    }
    return s + "]";
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

/// Views the trailing axis of size `cols` as matrix columns, everything
/// before it as rows.
template <typename T>
MatMap<T> as_matrix(Tensor<T>& t, int64_t rows, int64_t cols) {
  return MatMap<T>(t.ptr(), rows, cols);
}
template <typename T>
ConstMatMap<T> as_matrix(const Tensor<T>& t, int64_t rows, int64_t cols) {
  return ConstMatMap<T>(t.ptr(), rows, cols);
}

}  // namespace unirgbir
