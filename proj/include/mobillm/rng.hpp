#pragma once

#include <cstdint>
#include <random>

#include "mobillm/tensor.hpp"

namespace mobillm {

// Seeded generator: std::mt19937_64 for raw bits (its output sequence is
// fixed by the standard), 53-bit uniform doubles, Box-Muller normals.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  double gaussian();

  template <typename T>
  Tensor<T> gaussian_tensor(Shape shape, double mean, double std) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.data()) v = static_cast<T>(mean + std * gaussian());
    return t;
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Derives an independent stream seed from a base seed and a stream index.
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t stream);

}  // namespace mobillm
