#include "mobillm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mobillm/half.hpp"

namespace mobillm {

std::size_t shape_elements(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace {

std::size_t last_dim(const Shape& shape, const char* op) {
  if (shape.empty()) throw DimensionError(std::string(op) + ": rank-0 tensor");
  return shape.back();
}

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
}

template <typename T>
T gelu(T x) {
  constexpr T kSqrt2OverPi = static_cast<T>(0.79788456080286535587989211986876);
  constexpr T kCubic = static_cast<T>(0.044715);
  const T inner = kSqrt2OverPi * (x + kCubic * x * x * x);
  return static_cast<T>(0.5) * x * (static_cast<T>(1) + std::tanh(inner));
}

template <typename T>
T gelu_grad(T x) {
  constexpr T kSqrt2OverPi = static_cast<T>(0.79788456080286535587989211986876);
  constexpr T kCubic = static_cast<T>(0.044715);
  const T inner = kSqrt2OverPi * (x + kCubic * x * x * x);
  const T th = std::tanh(inner);
  const T d_inner = kSqrt2OverPi * (static_cast<T>(1) + static_cast<T>(3) * kCubic * x * x);
  return static_cast<T>(0.5) * (static_cast<T>(1) + th) +
         static_cast<T>(0.5) * x * (static_cast<T>(1) - th * th) * d_inner;
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const std::size_t k = last_dim(a.shape(), "matmul");
  if (b.rank() != 2 || b.dim(0) != k) {
    throw DimensionError("matmul: inner extents differ: " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  const std::size_t p = b.dim(1);
  const std::size_t rows = k == 0 ? 0 : a.size() / k;
  Shape out_shape = a.shape();
  out_shape.back() = p;
  Tensor<T> out(out_shape);
  auto A = a.data();
  auto B = b.data();
  auto C = out.data();
  // i-k-j order: every C[i, j] still receives its terms in ascending k.
  for (std::size_t i = 0; i < rows; ++i) {
    T* c_row = C.data() + i * p;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const T av = A[i * k + kk];
      const T* b_row = B.data() + kk * p;
      for (std::size_t j = 0; j < p; ++j) c_row[j] += av * b_row[j];
    }
  }
  return out;
}

template <typename T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b) {
  const std::size_t n = last_dim(a.shape(), "matmul_tn");
  const std::size_t p = last_dim(b.shape(), "matmul_tn");
  const std::size_t rows = n == 0 ? 0 : a.size() / n;
  if ((p == 0 ? 0 : b.size() / p) != rows) {
    throw DimensionError("matmul_tn: row counts differ: " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
  Tensor<T> out({n, p});
  auto A = a.data();
  auto B = b.data();
  auto C = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < n; ++i) {
      const T av = A[r * n + i];
      for (std::size_t j = 0; j < p; ++j) C[i * p + j] += av * B[r * p + j];
    }
  }
  return out;
}

template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  const std::size_t k = last_dim(a.shape(), "matmul_nt");
  if (b.rank() != 2 || b.dim(1) != k) {
    throw DimensionError("matmul_nt: inner extents differ: " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()) + "^T");
  }
  const std::size_t p = b.dim(0);
  const std::size_t rows = k == 0 ? 0 : a.size() / k;
  Shape out_shape = a.shape();
  out_shape.back() = p;
  Tensor<T> out(out_shape);
  auto A = a.data();
  auto B = b.data();
  auto C = out.data();
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < p; ++j) {
      T acc = 0;
      for (std::size_t kk = 0; kk < k; ++kk) acc += A[i * k + kk] * B[j * k + kk];
      C[i * p + j] = acc;
    }
  }
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T> out = a;
  add_inplace(out, b);
  return out;
}

template <typename T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "add");
  auto A = a.data();
  auto B = b.data();
  for (std::size_t i = 0; i < A.size(); ++i) A[i] += B[i];
}

template <typename T>
void add_bias_inplace(Tensor<T>& x, const Tensor<T>& bias) {
  const std::size_t p = last_dim(x.shape(), "add_bias");
  if (bias.size() != p) throw DimensionError("add_bias: bias length mismatch");
  auto X = x.data();
  auto Bv = bias.data();
  for (std::size_t i = 0; i < X.size(); ++i) X[i] += Bv[i % p];
}

template <typename T>
Tensor<T> sum_rows(const Tensor<T>& x) {
  const std::size_t p = last_dim(x.shape(), "sum_rows");
  Tensor<T> out({p});
  auto X = x.data();
  for (std::size_t i = 0; i < X.size(); ++i) out[i % p] += X[i];
  return out;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps,
                     LayerNormCache<T>& cache) {
  const std::size_t h = last_dim(x.shape(), "layer_norm");
  if (gamma.size() != h || beta.size() != h) {
    throw DimensionError("layer_norm: affine length " + std::to_string(gamma.size()) +
                         " does not match hidden size " + std::to_string(h));
  }
  const std::size_t rows = h == 0 ? 0 : x.size() / h;
  Tensor<T> out(x.shape());
  cache.normalized = Tensor<T>(x.shape());
  cache.rstd.assign(rows, T{0});
  auto X = x.data();
  auto Y = out.data();
  auto N = cache.normalized.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = X.data() + r * h;
    T mean = 0;
    for (std::size_t i = 0; i < h; ++i) mean += row[i];
    mean /= static_cast<T>(h);
    T var = 0;
    for (std::size_t i = 0; i < h; ++i) {
      const T d = row[i] - mean;
      var += d * d;
    }
    var /= static_cast<T>(h);
    const T denom = std::sqrt(var + eps);
    // A constant row with eps == 0 normalizes to zeros rather than NaN.
    const T rstd = denom > 0 ? static_cast<T>(1) / denom : T{0};
    cache.rstd[r] = rstd;
    for (std::size_t i = 0; i < h; ++i) {
      const T n = (row[i] - mean) * rstd;
      N[r * h + i] = n;
      Y[r * h + i] = gamma[i] * n + beta[i];
    }
  }
  return out;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  LayerNormCache<T> cache;
  return layer_norm(x, gamma, beta, eps, cache);
}

template <typename T>
Tensor<T> layer_norm_backward(const Tensor<T>& dy, const LayerNormCache<T>& cache,
                              const Tensor<T>& gamma, Tensor<T>& d_gamma, Tensor<T>& d_beta) {
  check_same_shape(dy, cache.normalized, "layer_norm_backward");
  const std::size_t h = last_dim(dy.shape(), "layer_norm_backward");
  const std::size_t rows = cache.rstd.size();
  Tensor<T> dx(dy.shape());
  auto DY = dy.data();
  auto N = cache.normalized.data();
  auto DX = dx.data();
  std::vector<T> g(h);
  for (std::size_t r = 0; r < rows; ++r) {
    T sum_g = 0;
    T sum_gn = 0;
    for (std::size_t i = 0; i < h; ++i) {
      const std::size_t idx = r * h + i;
      d_gamma[i] += DY[idx] * N[idx];
      d_beta[i] += DY[idx];
      g[i] = DY[idx] * gamma[i];
      sum_g += g[i];
      sum_gn += g[i] * N[idx];
    }
    const T inv_h = static_cast<T>(1) / static_cast<T>(h);
    for (std::size_t i = 0; i < h; ++i) {
      const std::size_t idx = r * h + i;
      DX[idx] = cache.rstd[r] * (g[i] - inv_h * sum_g - N[idx] * inv_h * sum_gn);
    }
  }
  return dx;
}

template <typename T>
Tensor<T> nonlinearity(const Tensor<T>& x, Nonlinearity kind) {
  Tensor<T> out(x.shape());
  auto X = x.data();
  auto Y = out.data();
  switch (kind) {
    case Nonlinearity::gelu:
      for (std::size_t i = 0; i < X.size(); ++i) Y[i] = gelu(X[i]);
      break;
    case Nonlinearity::relu:
      for (std::size_t i = 0; i < X.size(); ++i) Y[i] = X[i] > 0 ? X[i] : T{0};
      break;
    case Nonlinearity::softmax_rows: {
      const std::size_t n = last_dim(x.shape(), "softmax_rows");
      const std::size_t rows = n == 0 ? 0 : X.size() / n;
      for (std::size_t r = 0; r < rows; ++r) {
        const T* in = X.data() + r * n;
        T* o = Y.data() + r * n;
        const T mx = *std::max_element(in, in + n);
        T total = 0;
        for (std::size_t i = 0; i < n; ++i) {
          o[i] = std::exp(in[i] - mx);
          total += o[i];
        }
        for (std::size_t i = 0; i < n; ++i) o[i] /= total;
      }
      break;
    }
  }
  return out;
}

template <typename T>
Tensor<T> nonlinearity_grad(const Tensor<T>& pre, Nonlinearity kind) {
  Tensor<T> out(pre.shape());
  auto X = pre.data();
  auto Y = out.data();
  switch (kind) {
    case Nonlinearity::gelu:
      for (std::size_t i = 0; i < X.size(); ++i) Y[i] = gelu_grad(X[i]);
      break;
    case Nonlinearity::relu:
      for (std::size_t i = 0; i < X.size(); ++i) Y[i] = X[i] > 0 ? T{1} : T{0};
      break;
    case Nonlinearity::softmax_rows:
      throw InputError("nonlinearity_grad: softmax has no elementwise derivative");
  }
  return out;
}

template <typename T>
Tensor<T> mean_pool(const Tensor<T>& x) {
  if (x.rank() != 3) throw DimensionError("mean_pool: expected [B, S, H], got " + shape_string(x.shape()));
  const std::size_t b = x.dim(0), s = x.dim(1), h = x.dim(2);
  if (s == 0) throw EmptyInputError("mean_pool: sequence length is zero");
  Tensor<T> out({b, h});
  auto X = x.data();
  for (std::size_t bi = 0; bi < b; ++bi) {
    for (std::size_t hi = 0; hi < h; ++hi) {
      T acc = 0;
      for (std::size_t si = 0; si < s; ++si) acc += X[(bi * s + si) * h + hi];
      out[bi * h + hi] = acc / static_cast<T>(s);
    }
  }
  return out;
}

Tensor<float> f16_roundtrip(const Tensor<float>& x) {
  Tensor<float> out(x.shape());
  auto X = x.data();
  auto Y = out.data();
  for (std::size_t i = 0; i < X.size(); ++i) Y[i] = f16_round(X[i]);
  return out;
}

bool all_finite(std::span<const float> values) {
  return std::all_of(values.begin(), values.end(), [](float v) { return std::isfinite(v); });
}

bool all_finite(std::span<const double> values) {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

#define MOBILLM_INSTANTIATE(T)                                                               \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> matmul_tn(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> matmul_nt(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                \
  template void add_inplace(Tensor<T>&, const Tensor<T>&);                                   \
  template void add_bias_inplace(Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> sum_rows(const Tensor<T>&);                                             \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);    \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T,     \
                                LayerNormCache<T>&);                                         \
  template Tensor<T> layer_norm_backward(const Tensor<T>&, const LayerNormCache<T>&,         \
                                         const Tensor<T>&, Tensor<T>&, Tensor<T>&);          \
  template Tensor<T> nonlinearity(const Tensor<T>&, Nonlinearity);                           \
  template Tensor<T> nonlinearity_grad(const Tensor<T>&, Nonlinearity);                      \
  template Tensor<T> mean_pool(const Tensor<T>&);

MOBILLM_INSTANTIATE(float)
MOBILLM_INSTANTIATE(double)

#undef MOBILLM_INSTANTIATE

}  // namespace mobillm
