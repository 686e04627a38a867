#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <limits>

#include "mobillm/error.hpp"
#include "mobillm/half.hpp"
#include "mobillm/quant.hpp"
#include "mobillm/rng.hpp"

using namespace mobillm;

namespace {

// tests/oracles/gen_golden.py, 50-digit mpmath.
constexpr std::array<double, 16> kNf4Golden = {
    -1.0,
    -0.69619289060372012865,
    -0.52507303869522908255,
    -0.39491749069930988612,
    -0.28444135761810752785,
    -0.18477343519288883315,
    -0.091049992144279383343,
    0.0,
    0.079580329094169350221,
    0.16093017270493612435,
    0.24611229392993582273,
    0.33791519352165501797,
    0.44070980241319005143,
    0.56261697007523708899,
    0.72295672789288219056,
    1.0,
};

constexpr QuantScheme kAll[] = {QuantScheme::none_fp16, QuantScheme::fp8_e4m3,
                                QuantScheme::fp4_grid, QuantScheme::nf4};

std::uint8_t brute_force_nf4(float v) {
  const auto& t = nf4_codebook();
  std::uint8_t best = 0;
  for (std::uint8_t i = 1; i < 16; ++i) {
    if (std::abs(v - t[i]) < std::abs(v - t[best])) best = i;  // strict: ties keep the lower index
  }
  return best;
}

std::vector<std::uint8_t> nibbles_of(const QuantizedActivation& q) {
  return unpack_nibbles(q.codes, shape_elements(q.shape));
}

}  // namespace

TEST(Nf4Codebook, MatchesHighPrecisionGolden) {
  const auto& t = nf4_codebook();
  ASSERT_EQ(t.size(), 16u);
  for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(t[i], static_cast<float>(kNf4Golden[i])) << i;
  EXPECT_EQ(t.front(), -1.0f);
  EXPECT_EQ(t.back(), 1.0f);
  EXPECT_EQ(t[kNf4ZeroIndex], 0.0f);
  EXPECT_TRUE(std::is_sorted(t.begin(), t.end()));
}

TEST(Nf4, NearestIndexMatchesBruteForce) {
  Rng rng(21);
  for (int i = 0; i < 10000; ++i) {
    const float v = static_cast<float>(std::clamp(rng.gaussian() / 3.0, -1.0, 1.0));
    ASSERT_EQ(nf4_nearest_index(v), brute_force_nf4(v)) << v;
  }
  const auto& t = nf4_codebook();
  for (std::uint8_t i = 0; i + 1 < 16; ++i) {
    const float mid = (t[i] + t[i + 1]) / 2;
    EXPECT_EQ(nf4_nearest_index(mid), brute_force_nf4(mid));
  }
}

TEST(Nf4, QuantizeCodesMatchBruteForceOnGaussians) {
  Rng rng(22);
  const auto x = rng.gaussian_tensor<float>({1000}, 0, 1);
  const auto q = quantize(x, QuantScheme::nf4);
  const auto codes = nibbles_of(q);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(codes[i], brute_force_nf4(x[i] / q.scale));
}

TEST(Nf4, CodebookPointsAreFixedPoints) {
  const float scale = 2.5f;
  TensorF x({16});
  for (std::size_t i = 0; i < 16; ++i) x[i] = nf4_codebook()[i] * scale;
  const auto q = quantize(x, QuantScheme::nf4);
  EXPECT_EQ(q.scale, scale);
  const auto codes = nibbles_of(q);
  for (std::uint8_t i = 0; i < 16; ++i) EXPECT_EQ(codes[i], i);
}

TEST(Nf4, RoundTripErrorBoundedByHalfLargestGap) {
  const auto& t = nf4_codebook();
  float gap = 0;
  for (std::size_t i = 0; i + 1 < 16; ++i) gap = std::max(gap, t[i + 1] - t[i]);
  Rng rng(23);
  const auto x = rng.gaussian_tensor<float>({5000}, 0, 1);
  const auto q = quantize(x, QuantScheme::nf4);
  const auto y = dequantize(q);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_LE(std::abs(x[i] - y[i]), q.scale * gap / 2 * (1 + 1e-6f));
}

TEST(Fp4Grid, GridPointsAreLossless) {
  for (float s : {0.3f, 1.0f, 7.0f, 123.25f}) {
    const TensorF x({4}, {s, -s, s * (3.0f / 7.0f), 0.0f});
    const auto q = quantize(x, QuantScheme::fp4_grid);
    EXPECT_EQ(q.scale, s);
    const auto y = dequantize(q);
    EXPECT_EQ(y[0], s);
    EXPECT_EQ(y[1], -s);
    EXPECT_EQ(y[2], s * (3.0f / 7.0f));
    EXPECT_EQ(y[3], 0.0f);
  }
}

TEST(Fp4Grid, ErrorWithinHalfStep) {
  Rng rng(24);
  const auto x = rng.gaussian_tensor<float>({5000}, 0, 2);
  const auto q = quantize(x, QuantScheme::fp4_grid);
  const auto y = dequantize(q);
  const float ulp = std::numeric_limits<float>::epsilon() * q.scale * 4;
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_LE(std::abs(x[i] - y[i]), q.scale / 14 + ulp);
}

TEST(Fp4Grid, CodesAreMonotone) {
  Rng rng(25);
  auto x = rng.gaussian_tensor<float>({2000}, 0, 1);
  std::sort(x.data().begin(), x.data().end());
  const auto codes = nibbles_of(quantize(x, QuantScheme::fp4_grid));
  EXPECT_TRUE(std::is_sorted(codes.begin(), codes.end()));
  // The absmax element sits on an outermost level.
  EXPECT_TRUE(codes.front() == 1 || codes.back() == 15);
}

TEST(ScaleInvariance, PowerOfTwoFactorsGiveIdenticalCodes) {
  Rng rng(26);
  const auto x = rng.gaussian_tensor<float>({10000}, 0, 1);
  for (auto scheme : {QuantScheme::fp4_grid, QuantScheme::nf4}) {
    const auto base = quantize(x, scheme).codes;
    for (float c : {0.125f, 0.5f, 2.0f, 1024.0f}) {
      TensorF y = x;
      for (auto& v : y.data()) v *= c;
      EXPECT_EQ(quantize(y, scheme).codes, base) << to_string(scheme) << " c=" << c;
    }
  }
}

TEST(ScaleInvariance, IntegerGridWithIntegerFactors) {
  // Inputs and products stay exactly representable, so any c > 0 works.
  Rng rng(27);
  TensorF x({4096});
  for (auto& v : x.data()) v = static_cast<float>(static_cast<int>(rng.below(201)) - 100);
  for (auto scheme : {QuantScheme::fp4_grid, QuantScheme::nf4}) {
    const auto base = quantize(x, scheme).codes;
    for (float c : {3.0f, 7.0f, 11.0f, 1000.0f}) {
      TensorF y = x;
      for (auto& v : y.data()) v *= c;
      EXPECT_EQ(quantize(y, scheme).codes, base) << to_string(scheme) << " c=" << c;
    }
  }
}

TEST(ScaleInvariance, ArbitraryFactorsOnGaussians) {
  Rng rng(28);
  const auto x = rng.gaussian_tensor<float>({10000}, 0, 1);
  for (auto scheme : {QuantScheme::fp4_grid, QuantScheme::nf4}) {
    const auto base = quantize(x, scheme).codes;
    for (float c : {0.37f, 3.7f, 1e3f}) {
      TensorF y = x;
      for (auto& v : y.data()) v *= c;
      EXPECT_EQ(quantize(y, scheme).codes, base) << to_string(scheme) << " c=" << c;
    }
  }
}

TEST(Packing, ExhaustiveTwoByteRoundTrip) {
  for (std::uint32_t pattern = 0; pattern < 65536; ++pattern) {
    const std::array<std::uint8_t, 4> n = {
        static_cast<std::uint8_t>(pattern & 0xF), static_cast<std::uint8_t>((pattern >> 4) & 0xF),
        static_cast<std::uint8_t>((pattern >> 8) & 0xF), static_cast<std::uint8_t>(pattern >> 12)};
    const auto packed = pack_nibbles(n);
    ASSERT_EQ(packed.size(), 2u);
    ASSERT_EQ(packed[0], n[0] | (n[1] << 4));
    const auto back = unpack_nibbles(packed, 4);
    ASSERT_TRUE(std::equal(back.begin(), back.end(), n.begin()));
  }
}

TEST(Packing, OddCountsAndBadSizes) {
  const std::vector<std::uint8_t> n = {1, 2, 3};
  const auto p = pack_nibbles(n);
  EXPECT_EQ(p, (std::vector<std::uint8_t>{0x21, 0x03}));
  EXPECT_EQ(unpack_nibbles(p, 3), n);
  EXPECT_THROW(unpack_nibbles(p, 5), FormatError);
}

TEST(Quantize, ZeroTensorAllSchemes) {
  const TensorF x({3, 5});
  for (auto scheme : kAll) {
    const auto q = quantize(x, scheme);
    EXPECT_EQ(q.scale, 1.0f);
    EXPECT_EQ(q.codes.size(), code_bytes(15, scheme));
    const auto y = dequantize(q);
    for (float v : y.values()) EXPECT_EQ(v, 0.0f);
  }
  EXPECT_EQ(nibbles_of(quantize(x, QuantScheme::nf4))[0], kNf4ZeroIndex);
  EXPECT_EQ(nibbles_of(quantize(x, QuantScheme::fp4_grid))[0], 8);
}

TEST(Quantize, NonFiniteInputRejected) {
  TensorF x({3}, {1.0f, std::numeric_limits<float>::quiet_NaN(), 0.0f});
  EXPECT_THROW(quantize(x, QuantScheme::nf4), InputError);
  x[1] = std::numeric_limits<float>::infinity();
  EXPECT_THROW(quantize(x, QuantScheme::none_fp16), InputError);
}

TEST(Quantize, Fp16IsTheHalfRoundTrip) {
  Rng rng(29);
  const auto x = rng.gaussian_tensor<float>({2, 3, 7}, 0, 10);
  const auto y = dequantize(quantize(x, QuantScheme::none_fp16));
  EXPECT_EQ(y.values(), f16_roundtrip(x).values());
  EXPECT_EQ(y.shape(), x.shape());
}

TEST(Quantize, DequantizeIsIdempotentAtCodeLevel) {
  Rng rng(30);
  const auto x = rng.gaussian_tensor<float>({777}, 0, 1);
  for (auto scheme : kAll) {
    const auto once = dequantize(quantize(x, scheme));
    const auto twice = dequantize(quantize(once, scheme));
    EXPECT_EQ(once.values(), twice.values()) << to_string(scheme);
  }
}

TEST(Quantize, CodeLengthInvariant) {
  for (std::size_t n : {1u, 2u, 3u, 1000u, 1001u}) {
    Rng rng(n);
    const auto x = rng.gaussian_tensor<float>({n}, 0, 1);
    for (auto scheme : kAll) {
      const auto q = quantize(x, scheme);
      EXPECT_EQ(q.codes.size(), (n * bits_per_element(scheme) + 7) / 8);
    }
  }
}

TEST(Dequantize, MalformedInputsRejected) {
  Rng rng(31);
  auto q = quantize(rng.gaussian_tensor<float>({10}, 0, 1), QuantScheme::fp4_grid);
  auto bad = q;
  bad.codes.pop_back();
  EXPECT_THROW(dequantize(bad), FormatError);
  bad = q;
  bad.codes[0] = 0x80;  // low nibble 0 is not a level
  EXPECT_THROW(dequantize(bad), FormatError);
  bad = q;
  bad.scale = -1.0f;
  EXPECT_THROW(dequantize(bad), FormatError);
  EXPECT_THROW(scheme_from_wire(4), FormatError);
}

TEST(Fp8, EncodeDecodeProperties) {
  EXPECT_EQ(fp8_e4m3_decode(fp8_e4m3_encode(1.0f)), 1.0f);
  EXPECT_EQ(fp8_e4m3_decode(fp8_e4m3_encode(448.0f)), 448.0f);
  EXPECT_EQ(fp8_e4m3_decode(fp8_e4m3_encode(1e9f)), 448.0f);
  EXPECT_EQ(fp8_e4m3_decode(fp8_e4m3_encode(-0.5f)), -0.5f);
  EXPECT_EQ(fp8_e4m3_decode(fp8_e4m3_encode(0x1.0p-9f)), 0x1.0p-9f);
  // 1.0625 is halfway between 1 and 1.125; ties go to even (1.0).
  EXPECT_EQ(fp8_e4m3_decode(fp8_e4m3_encode(1.0625f)), 1.0f);
  EXPECT_EQ(fp8_e4m3_decode(fp8_e4m3_encode(1.1875f)), 1.25f);
  // Every finite code decodes to a value that encodes back to itself.
  for (int c = 0; c < 256; ++c) {
    const float v = fp8_e4m3_decode(static_cast<std::uint8_t>(c));
    if (std::isnan(v) || (v == 0.0f && c != 0)) continue;
    EXPECT_EQ(fp8_e4m3_encode(v), c) << c;
  }
}

TEST(PayloadBytes, TableFourShapes) {
  const Shape s{16, 256, 1024};
  const double mib = 1024.0 * 1024.0;
  const double fp16 = 24.0 * payload_bytes(s, QuantScheme::none_fp16) / mib;
  const double four = 24.0 * payload_bytes(s, QuantScheme::nf4) / mib;
  const double fp8 = 24.0 * payload_bytes(s, QuantScheme::fp8_e4m3) / mib;
  EXPECT_NEAR(fp16, 190.0, 190.0 * 0.05);
  EXPECT_NEAR(four, 49.2, 49.2 * 0.05);
  EXPECT_NEAR(fp8, 99.6, 99.6 * 0.05);
  EXPECT_NEAR(fp16 / four, 4.0, 1e-3);
  EXPECT_EQ(payload_bytes(s, QuantScheme::fp4_grid), payload_bytes(s, QuantScheme::nf4));
  EXPECT_EQ(payload_bytes({3}, QuantScheme::nf4), 2 + 4 + kTapHeaderBytes);
}
