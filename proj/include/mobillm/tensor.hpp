#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "mobillm/error.hpp"

namespace mobillm {

using Shape = std::vector<std::size_t>;

std::size_t shape_elements(const Shape& shape);
std::string shape_string(const Shape& shape);

// Row-major dense array. The scalar type is the compute precision: float is
// the default, double is used for gradient checks.
template <typename T>
class Tensor {
  static_assert(std::is_floating_point_v<T>);

 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape)
      : shape_(std::move(shape)), data_(shape_elements(shape_), T{0}) {}

  Tensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_elements(shape_)) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_string(shape_));
    }
  }

  static Tensor full(Shape shape, T value) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  const std::vector<T>& values() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // Same data, new extents with the same element count.
  Tensor reshaped(Shape shape) const {
    return Tensor(std::move(shape), data_);
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

enum class Nonlinearity { gelu, relu, softmax_rows };

// c[.., n, p] = a[.., n, k] * b[k, p]; each output accumulates k ascending
// from zero, so results match a naive triple loop bit for bit.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// aᵀ·b with both operands flattened to rows: a[R, n], b[R, p] -> [n, p].
template <typename T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b);

// a·bᵀ: a[.., k], b[p, k] -> [.., p].
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b);

// Adds a [p] bias to every row of x[.., p].
template <typename T>
void add_bias_inplace(Tensor<T>& x, const Tensor<T>& bias);

// Column sums of x[.., p] -> [p].
template <typename T>
Tensor<T> sum_rows(const Tensor<T>& x);

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, T eps);

// Saved intermediates for layer_norm_backward.
template <typename T>
struct LayerNormCache {
  Tensor<T> normalized;   // (x - mean) * rstd, same shape as x
  std::vector<T> rstd;    // one per row
};

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, T eps, LayerNormCache<T>& cache);

// Returns dx; accumulates into d_gamma and d_beta.
template <typename T>
Tensor<T> layer_norm_backward(const Tensor<T>& dy, const LayerNormCache<T>& cache,
                              const Tensor<T>& gamma, Tensor<T>& d_gamma,
                              Tensor<T>& d_beta);

// gelu is the tanh approximation
//   0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
template <typename T>
Tensor<T> nonlinearity(const Tensor<T>& x, Nonlinearity kind);

// Elementwise derivative of gelu/relu evaluated at the pre-activation.
template <typename T>
Tensor<T> nonlinearity_grad(const Tensor<T>& pre, Nonlinearity kind);

template <typename T>
Tensor<T> mean_pool(const Tensor<T>& x);

// Rounds every element through IEEE binary16 (nearest-even). Magnitudes
// beyond 65504 saturate to +-65504 instead of becoming infinite.
Tensor<float> f16_roundtrip(const Tensor<float>& x);

bool all_finite(std::span<const float> values);
bool all_finite(std::span<const double> values);

// Central differences (f(θ + h e_i) - f(θ - h e_i)) / 2h. Only double
// precision parameters are accepted.
template <typename T>
Tensor<T> finite_diff_grad(const std::function<double(const Tensor<T>&)>& f,
                           const Tensor<T>& theta, double h) {
  if constexpr (!std::is_same_v<T, double>) {
    throw PrecisionError("finite_diff_grad requires double precision");
  } else {
    Tensor<double> probe = theta;
    Tensor<double> grad(theta.shape());
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double saved = probe[i];
      probe[i] = saved + h;
      const double up = f(probe);
      probe[i] = saved - h;
      const double down = f(probe);
      probe[i] = saved;
      grad[i] = (up - down) / (2.0 * h);
    }
    return grad;
  }
}

}  // namespace mobillm
