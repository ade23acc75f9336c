#pragma once

#include "unirgbir/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace unirgbir {

/// Deterministic random source. All distribution transforms are written out
/// explicitly (no std:: distributions, whose streams are
/// implementation-defined), so a seed fixes every generated byte.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi], inclusive, via rejection.
  int uniform_int(int lo, int hi) {
    const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    const uint64_t limit = std::numeric_limits<uint64_t>::max() - std::numeric_limits<uint64_t>::max() % span;
    uint64_t r;
    do {
      r = gen_();
    } while (r >= limit);
    return lo + static_cast<int>(r % span);
  }

  bool coin() { return (gen_() & 1u) != 0; }

  /// Standard normal via Box-Muller (first branch only, fixed draw count).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mean, double std) { return mean + std * normal(); }

  /// Normal resampled into [-clip, clip] standard deviations.
  double trunc_normal(double std, double clip = 2.0) {
    double x = normal();
    while (std::abs(x) > clip) x = normal();
    return x * std;
  }

  template <typename T>
  void fill_normal(Tensor<T>& t, double std) {
    for (auto& v : t.data) v = static_cast<T>(normal() * std);
  }

  template <typename T>
  void fill_trunc_normal(Tensor<T>& t, double std) {
    for (auto& v : t.data) v = static_cast<T>(trunc_normal(std));
  }

  template <typename T>
  void fill_uniform(Tensor<T>& t, double lo, double hi) {
    for (auto& v : t.data) v = static_cast<T>(uniform(lo, hi));
  }

  void shuffle(std::vector<int>& xs) {
    for (int i = static_cast<int>(xs.size()) - 1; i > 0; --i) {
      std::swap(xs[static_cast<size_t>(i)], xs[static_cast<size_t>(uniform_int(0, i))]);
    }
  }

  /// Derives an independent stream; consumes one draw from this one.
  Rng fork(uint64_t salt) {
    return Rng(gen_() ^ (salt * 0x9e3779b97f4a7c15ull));
  }

 private:
  std::mt19937_64 gen_;
};

/// Seeds the process-wide generator. Everything the CLI initializes or
/// generates afterwards is a pure function of this seed.
void seed_all(uint64_t seed);
Rng& global_rng();

}  // namespace unirgbir
