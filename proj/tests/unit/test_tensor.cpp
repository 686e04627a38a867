#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <limits>

#include "mobillm/error.hpp"
#include "mobillm/half.hpp"
#include "mobillm/rng.hpp"
#include "mobillm/tensor.hpp"

using namespace mobillm;

namespace {

template <typename T>
Tensor<T> naive_matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const std::size_t k = b.dim(0), p = b.dim(1), n = a.size() / k;
  Tensor<T> c({n, p});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < p; ++j) {
      T acc = 0;
      for (std::size_t q = 0; q < k; ++q) acc += a[i * k + q] * b[q * p + j];
      c[i * p + j] = acc;
    }
  }
  return c;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  const std::size_t r = a.dim(0), c = a.dim(1);
  Tensor<T> t({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) t[j * r + i] = a[i * c + j];
  return t;
}

bool same_bits(float a, float b) { return std::memcmp(&a, &b, sizeof a) == 0; }

}  // namespace

TEST(Matmul, MatchesNaiveTripleLoopBitForBit) {
  Rng rng(11);
  for (auto [n, k, p] : {std::tuple{1, 1, 1}, {3, 5, 2}, {7, 13, 9}, {16, 32, 8}}) {
    auto a = rng.gaussian_tensor<float>({std::size_t(n), std::size_t(k)}, 0, 1);
    auto b = rng.gaussian_tensor<float>({std::size_t(k), std::size_t(p)}, 0, 1);
    const auto got = matmul(a, b);
    const auto want = naive_matmul(a, b);
    ASSERT_EQ(got.shape(), want.shape());
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_TRUE(same_bits(got[i], want[i])) << i;
  }
}

TEST(Matmul, BatchedLeadingAxesFlatten) {
  Rng rng(12);
  auto a = rng.gaussian_tensor<float>({2, 3, 4}, 0, 1);
  auto b = rng.gaussian_tensor<float>({4, 5}, 0, 1);
  const auto got = matmul(a, b);
  EXPECT_EQ(got.shape(), (Shape{2, 3, 5}));
  EXPECT_EQ(got.values(), naive_matmul(a.reshaped({6, 4}), b).values());
}

TEST(Matmul, TransposedVariantsAgreeWithExplicitTranspose) {
  Rng rng(13);
  auto a = rng.gaussian_tensor<double>({6, 4}, 0, 1);
  auto b = rng.gaussian_tensor<double>({6, 3}, 0, 1);
  const auto tn = matmul_tn(a, b);
  const auto ref = naive_matmul(transpose(a), b);
  for (std::size_t i = 0; i < tn.size(); ++i) EXPECT_NEAR(tn[i], ref[i], 1e-12);

  auto c = rng.gaussian_tensor<double>({5, 4}, 0, 1);
  const auto nt = matmul_nt(a, c);
  const auto ref2 = naive_matmul(a, transpose(c));
  for (std::size_t i = 0; i < nt.size(); ++i) EXPECT_NEAR(nt[i], ref2[i], 1e-12);
}

TEST(Matmul, ShapeMismatchThrowsDimensionError) {
  TensorF a({2, 3}), b({4, 2});
  EXPECT_THROW(matmul(a, b), DimensionError);
  TensorF c({2, 2});
  EXPECT_THROW(add(a, c), DimensionError);
}

TEST(Kernels, BiasAndColumnSums) {
  TensorD x({2, 3}, {1, 2, 3, 4, 5, 6});
  add_bias_inplace(x, TensorD({3}, {10, 20, 30}));
  EXPECT_EQ(x.values(), (std::vector<double>{11, 22, 33, 14, 25, 36}));
  EXPECT_EQ(sum_rows(x).values(), (std::vector<double>{25, 47, 69}));
}

TEST(LayerNorm, RowsHaveZeroMeanUnitVariance) {
  Rng rng(3);
  auto x = rng.gaussian_tensor<double>({5, 16}, 2.0, 3.0);
  auto y = layer_norm(x, TensorD::full({16}, 1.0), TensorD::full({16}, 0.0), 0.0);
  for (std::size_t r = 0; r < 5; ++r) {
    double mean = 0, var = 0;
    for (std::size_t j = 0; j < 16; ++j) mean += y[r * 16 + j];
    mean /= 16;
    for (std::size_t j = 0; j < 16; ++j) var += (y[r * 16 + j] - mean) * (y[r * 16 + j] - mean);
    EXPECT_NEAR(mean, 0.0, 1e-12);
    EXPECT_NEAR(var / 16, 1.0, 1e-12);
  }
}

TEST(LayerNorm, ConstantRowMapsToBeta) {
  TensorF x = TensorF::full({1, 4}, 3.5f);
  auto y = layer_norm(x, TensorF::full({4}, 2.0f), TensorF({4}, {1, 2, 3, 4}), 1e-5f);
  EXPECT_EQ(y.values(), (std::vector<float>{1, 2, 3, 4}));
}

TEST(LayerNorm, BackwardMatchesFiniteDifferences) {
  Rng rng(4);
  auto x = rng.gaussian_tensor<double>({3, 6}, 0, 1);
  auto gamma = rng.gaussian_tensor<double>({6}, 1, 0.3);
  auto beta = rng.gaussian_tensor<double>({6}, 0, 0.3);
  auto w = rng.gaussian_tensor<double>({3, 6}, 0, 1);
  auto loss = [&](const TensorD& xx, const TensorD& g, const TensorD& b) {
    auto y = layer_norm(xx, g, b, 1e-5);
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * w[i];
    return s;
  };
  LayerNormCache<double> cache;
  layer_norm(x, gamma, beta, 1e-5, cache);
  TensorD dg({6}), db({6});
  const auto dx = layer_norm_backward(w, cache, gamma, dg, db);
  const auto nx = finite_diff_grad<double>([&](const TensorD& t) { return loss(t, gamma, beta); }, x, 1e-6);
  const auto ng = finite_diff_grad<double>([&](const TensorD& t) { return loss(x, t, beta); }, gamma, 1e-6);
  const auto nb = finite_diff_grad<double>([&](const TensorD& t) { return loss(x, gamma, t); }, beta, 1e-6);
  for (std::size_t i = 0; i < dx.size(); ++i) EXPECT_NEAR(dx[i], nx[i], 1e-7);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_NEAR(dg[i], ng[i], 1e-7);
    EXPECT_NEAR(db[i], nb[i], 1e-7);
  }
}

TEST(Nonlinearity, GeluMatchesHighPrecisionOracle) {
  // tests/oracles/gen_golden.py (mpmath, 50 digits)
  const TensorD x({3}, {1.0, -2.5, 0.0});
  const auto y = nonlinearity(x, Nonlinearity::gelu);
  EXPECT_NEAR(y[0], 0.84119199060827670478, 1e-15);
  EXPECT_NEAR(y[1], -0.015084266089998582079, 1e-15);
  EXPECT_EQ(y[2], 0.0);
  const auto yf = nonlinearity(x.cast<float>(), Nonlinearity::gelu);
  EXPECT_NEAR(yf[0], 0.841191990608f, 2e-7f);
}

TEST(Nonlinearity, GradientsMatchFiniteDifferences) {
  Rng rng(5);
  auto x = rng.gaussian_tensor<double>({40}, 0, 2);
  for (auto kind : {Nonlinearity::gelu, Nonlinearity::relu}) {
    const auto g = nonlinearity_grad(x, kind);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double h = 1e-6;
      TensorD p({1}, {x[i] + h}), m({1}, {x[i] - h});
      const double num = (nonlinearity(p, kind)[0] - nonlinearity(m, kind)[0]) / (2 * h);
      EXPECT_NEAR(g[i], num, 1e-7) << "x=" << x[i];
    }
  }
}

TEST(Nonlinearity, SoftmaxRowsSumToOneAndAreShiftInvariant) {
  TensorD x({2, 3}, {1, 2, 3, 1001, 1002, 1003});
  const auto y = nonlinearity(x, Nonlinearity::softmax_rows);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(y[j], y[3 + j], 1e-15);
  EXPECT_NEAR(y[0] + y[1] + y[2], 1.0, 1e-15);
  EXPECT_TRUE(all_finite(y.data()));
}

TEST(MeanPool, AveragesOverSequence) {
  TensorD x({1, 2, 2}, {1, 2, 3, 6});
  EXPECT_EQ(mean_pool(x).values(), (std::vector<double>{2, 4}));
  EXPECT_THROW(mean_pool(TensorD({2, 0, 3})), EmptyInputError);
}

TEST(Half, RoundTripGoldens) {
  EXPECT_EQ(float_to_half_bits(0.1f), 0x2e66);
  EXPECT_EQ(f16_round(0.1f), 0.0999755859375f);
  EXPECT_EQ(f16_round(1.0f / 3.0f), 0.333251953125f);
  EXPECT_EQ(f16_round(65504.0f), 65504.0f);
  EXPECT_EQ(f16_round(1e6f), 65504.0f);
  EXPECT_EQ(f16_round(-1e6f), -65504.0f);
  EXPECT_EQ(f16_round(std::numeric_limits<float>::infinity()), 65504.0f);
  // Ties go to even: 1 + 2^-11 sits halfway between 1 and 1 + 2^-10.
  EXPECT_EQ(f16_round(1.0f + 0x1.0p-11f), 1.0f);
  EXPECT_EQ(f16_round(1.0f + 3 * 0x1.0p-11f), 1.0f + 0x1.0p-9f);
  // Smallest subnormal and below.
  EXPECT_EQ(f16_round(0x1.0p-24f), 0x1.0p-24f);
  EXPECT_EQ(f16_round(0x1.0p-26f), 0.0f);
  EXPECT_TRUE(std::isnan(f16_round(std::numeric_limits<float>::quiet_NaN())));
}

TEST(Half, EveryHalfValueRoundTripsExactly) {
  for (std::uint32_t bits = 0; bits < 0x10000; ++bits) {
    const auto h = static_cast<std::uint16_t>(bits);
    if ((h & 0x7C00) == 0x7C00) continue;  // inf / nan
    EXPECT_EQ(float_to_half_bits(half_bits_to_float(h)), h) << std::hex << bits;
  }
}

TEST(FiniteDiff, RejectsSinglePrecision) {
  TensorF t({2});
  EXPECT_THROW(finite_diff_grad<float>([](const TensorF&) { return 0.0; }, t, 1e-3), PrecisionError);
}

TEST(FiniteDiff, QuadraticIsExact) {
  TensorD t({3}, {1, -2, 0.5});
  const auto g = finite_diff_grad<double>(
      [](const TensorD& x) { return x[0] * x[0] + 3 * x[1] + x[2] * x[2] * 2; }, t, 1e-4);
  EXPECT_NEAR(g[0], 2.0, 1e-9);
  EXPECT_NEAR(g[1], 3.0, 1e-9);
  EXPECT_NEAR(g[2], 2.0, 1e-9);
}

TEST(Rng, DeterministicAndWellScaled) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) ASSERT_EQ(a.next_u64(), b.next_u64());
  Rng g(7);
  double s = 0, s2 = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double v = g.gaussian();
    s += v;
    s2 += v * v;
  }
  EXPECT_NEAR(s / n, 0.0, 0.02);
  EXPECT_NEAR(std::sqrt(s2 / n), 1.0, 0.02);
  Rng u(8);
  for (int i = 0; i < 1000; ++i) {
    const auto k = u.below(7);
    ASSERT_LT(k, 7u);
  }
  EXPECT_NE(mix_seed(1, 0), mix_seed(1, 1));
  EXPECT_NE(mix_seed(1, 0), mix_seed(2, 0));
}
