#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "pmt/common.hpp"
#include "pmt/tensor.hpp"

namespace pmt {

// Deterministic random source. The engine is std::mt19937_64 (whose output
// sequence the standard pins down); the scalar transforms are implemented
// here because the standard library's distributions are not guaranteed to
// produce identical streams across implementations, and seeded runs must
// be byte-reproducible.
class RandomSource {
 public:
  explicit RandomSource(std::uint64_t seed) : engine_(seed) {}

  // Uniform in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n) by rejection, bias-free.
  Index uniform_index(Index n) {
    if (n <= 0) throw ContractError("rng-empty-range", "uniform_index needs n > 0");
    const std::uint64_t un = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = (~std::uint64_t(0) / un) * un;
    std::uint64_t v;
    do {
      v = engine_();
    } while (v >= limit);
    return static_cast<Index>(v % un);
  }

  // Standard normal via Box-Muller; the pair's second value is discarded so
  // the draw count per call is fixed.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  bool bernoulli(double p) { return uniform() < p; }

  template <typename S>
  void fill_uniform(Tensor<S>& t, S lo, S hi) {
    for (Index i = 0; i < t.numel(); ++i)
      t.data()[i] = static_cast<S>(uniform(static_cast<double>(lo), static_cast<double>(hi)));
  }

  std::uint64_t raw() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace pmt
