#include "mobillm/quant.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include "mobillm/half.hpp"

namespace mobillm {

std::string_view to_string(QuantScheme scheme) {
  switch (scheme) {
    case QuantScheme::none_fp16: return "fp16";
    case QuantScheme::fp8_e4m3: return "fp8";
    case QuantScheme::fp4_grid: return "fp4";
    case QuantScheme::nf4: return "nf4";
  }
  return "unknown";
}

std::optional<QuantScheme> parse_scheme(std::string_view text) {
  if (text == "fp16" || text == "none_fp16" || text == "none") return QuantScheme::none_fp16;
  if (text == "fp8" || text == "fp8_e4m3") return QuantScheme::fp8_e4m3;
  if (text == "fp4" || text == "fp4_grid") return QuantScheme::fp4_grid;
  if (text == "nf4") return QuantScheme::nf4;
  return std::nullopt;
}

QuantScheme scheme_from_wire(std::uint8_t value) {
  if (value > static_cast<std::uint8_t>(QuantScheme::nf4)) {
    throw FormatError("unknown quantization scheme " + std::to_string(value));
  }
  return static_cast<QuantScheme>(value);
}

unsigned bits_per_element(QuantScheme scheme) {
  switch (scheme) {
    case QuantScheme::none_fp16: return 16;
    case QuantScheme::fp8_e4m3: return 8;
    case QuantScheme::fp4_grid:
    case QuantScheme::nf4: return 4;
  }
  return 16;
}

namespace {

// Inverse standard normal CDF by bisection on erfc; converges to the last
// bit of a double in well under 200 halvings.
double normal_quantile(double p) {
  double lo = -10.0, hi = 10.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    const double cdf = 0.5 * std::erfc(-mid / std::sqrt(2.0));
    (cdf < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

std::array<float, 16> build_nf4_codebook() {
  constexpr double kOffset = 0.9677083;
  std::array<double, 16> v{};
  std::size_t n = 0;
  // linspace(offset, 0.5, 9)[:-1] on the positive side, (…, 8)[:-1] on the negative.
  for (int i = 0; i < 8; ++i) v[n++] = normal_quantile(kOffset + (0.5 - kOffset) * i / 8.0);
  for (int i = 0; i < 7; ++i) v[n++] = -normal_quantile(kOffset + (0.5 - kOffset) * i / 7.0);
  v[n++] = 0.0;
  std::sort(v.begin(), v.end());
  const double top = std::max(std::abs(v.front()), std::abs(v.back()));
  std::array<float, 16> out{};
  for (std::size_t i = 0; i < 16; ++i) out[i] = static_cast<float>(v[i] / top);
  return out;
}

float absmax(std::span<const float> values) {
  float m = 0.0f;
  for (float v : values) m = std::max(m, std::abs(v));
  return m;
}

}  // namespace

const std::array<float, 16>& nf4_codebook() {
  static const std::array<float, 16> table = build_nf4_codebook();
  return table;
}

std::uint8_t fp8_e4m3_encode(float value) {
  const std::uint8_t sign = std::signbit(value) ? 0x80 : 0x00;
  float mag = std::abs(value);
  if (mag == 0.0f) return sign;
  if (mag >= 448.0f) return static_cast<std::uint8_t>(sign | 0x7E);
  int exp2 = 0;
  std::frexp(mag, &exp2);           // mag = f * 2^exp2, f in [0.5, 1)
  int e = std::max(exp2 - 1, -6);   // unbiased exponent, subnormals share -6
  const float step = std::ldexp(1.0f, e - 3);
  const float q = std::nearbyint(mag / step);  // ties to even under the default mode
  const float rounded = q * step;
  if (rounded == 0.0f) return sign;
  std::frexp(rounded, &exp2);
  e = exp2 - 1;
  if (e < -6) {
    // Subnormal: value = m * 2^-9.
    return static_cast<std::uint8_t>(sign | static_cast<std::uint8_t>(rounded / std::ldexp(1.0f, -9)));
  }
  const int mantissa = static_cast<int>(rounded / std::ldexp(1.0f, e - 3)) - 8;
  return static_cast<std::uint8_t>(sign | ((e + 7) << 3) | mantissa);
}

float fp8_e4m3_decode(std::uint8_t code) {
  const float sign = (code & 0x80) ? -1.0f : 1.0f;
  const int exponent = (code >> 3) & 0x0F;
  const int mantissa = code & 0x07;
  if (exponent == 0x0F && mantissa == 0x07) return std::nanf("");
  if (exponent == 0) return sign * std::ldexp(static_cast<float>(mantissa), -9);
  return sign * std::ldexp(static_cast<float>(8 + mantissa), exponent - 10);
}

std::uint8_t nf4_nearest_index(float normalized) {
  const auto& table = nf4_codebook();
  // First entry >= normalized, then pick the closer neighbour (ties low).
  const auto it = std::lower_bound(table.begin(), table.end(), normalized);
  if (it == table.begin()) return 0;
  if (it == table.end()) return 15;
  const auto hi = static_cast<std::uint8_t>(it - table.begin());
  const std::uint8_t lo = hi - 1;
  return std::abs(normalized - table[lo]) <= std::abs(table[hi] - normalized) ? lo : hi;
}

std::vector<std::uint8_t> pack_nibbles(std::span<const std::uint8_t> nibbles) {
  std::vector<std::uint8_t> packed((nibbles.size() + 1) / 2, 0);
  for (std::size_t i = 0; i < nibbles.size(); ++i) {
    const std::uint8_t v = nibbles[i] & 0x0F;
    packed[i / 2] |= (i % 2 == 0) ? v : static_cast<std::uint8_t>(v << 4);
  }
  return packed;
}

std::vector<std::uint8_t> unpack_nibbles(std::span<const std::uint8_t> packed, std::size_t count) {
  if (packed.size() != (count + 1) / 2) {
    throw FormatError("unpack_nibbles: " + std::to_string(packed.size()) + " bytes cannot hold " +
                      std::to_string(count) + " codes");
  }
  std::vector<std::uint8_t> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    out[i] = (i % 2 == 0) ? (packed[i / 2] & 0x0F) : (packed[i / 2] >> 4);
  }
  return out;
}

std::size_t code_bytes(std::size_t elements, QuantScheme scheme) {
  return (elements * bits_per_element(scheme) + 7) / 8;
}

std::size_t payload_bytes(const Shape& shape, QuantScheme scheme) {
  return code_bytes(shape_elements(shape), scheme) + 4 + kTapHeaderBytes;
}

QuantizedActivation quantize(const TensorF& x, QuantScheme scheme) {
  if (!all_finite(x.data())) throw InputError("quantize: input contains NaN or Inf");
  QuantizedActivation q;
  q.scheme = scheme;
  q.shape = x.shape();
  const float m = absmax(x.data());
  q.scale = m > 0.0f ? m : 1.0f;
  const std::size_t n = x.size();
  auto X = x.data();

  switch (scheme) {
    case QuantScheme::none_fp16: {
      q.codes.resize(2 * n);
      for (std::size_t i = 0; i < n; ++i) {
        const std::uint16_t h = float_to_half_bits(X[i]);
        q.codes[2 * i] = static_cast<std::uint8_t>(h & 0xFF);
        q.codes[2 * i + 1] = static_cast<std::uint8_t>(h >> 8);
      }
      break;
    }
    case QuantScheme::fp8_e4m3: {
      q.codes.resize(n);
      for (std::size_t i = 0; i < n; ++i) q.codes[i] = fp8_e4m3_encode(X[i] / q.scale);
      break;
    }
    case QuantScheme::fp4_grid: {
      std::vector<std::uint8_t> nibbles(n);
      for (std::size_t i = 0; i < n; ++i) {
        float level = std::round(X[i] / q.scale * static_cast<float>(kFp4GridLevels));
        level = std::clamp(level, -7.0f, 7.0f);
        nibbles[i] = static_cast<std::uint8_t>(static_cast<int>(level) + 8);
      }
      q.codes = pack_nibbles(nibbles);
      break;
    }
    case QuantScheme::nf4: {
      std::vector<std::uint8_t> nibbles(n);
      for (std::size_t i = 0; i < n; ++i) nibbles[i] = nf4_nearest_index(X[i] / q.scale);
      q.codes = pack_nibbles(nibbles);
      break;
    }
  }
  return q;
}

TensorF dequantize(const QuantizedActivation& q) {
  const std::size_t n = shape_elements(q.shape);
  if (q.codes.size() != code_bytes(n, q.scheme)) {
    throw FormatError("dequantize: " + std::to_string(q.codes.size()) + " code bytes for shape " +
                      shape_string(q.shape) + " under " + std::string(to_string(q.scheme)));
  }
  if (!(q.scale >= 0.0f) || !std::isfinite(q.scale)) throw FormatError("dequantize: invalid scale");
  TensorF out(q.shape);
  auto Y = out.data();
  switch (q.scheme) {
    case QuantScheme::none_fp16:
      for (std::size_t i = 0; i < n; ++i) {
        const auto h = static_cast<std::uint16_t>(q.codes[2 * i] | (q.codes[2 * i + 1] << 8));
        Y[i] = half_bits_to_float(h);
      }
      break;
    case QuantScheme::fp8_e4m3:
      for (std::size_t i = 0; i < n; ++i) Y[i] = fp8_e4m3_decode(q.codes[i]) * q.scale;
      break;
    case QuantScheme::fp4_grid: {
      const auto nibbles = unpack_nibbles(q.codes, n);
      for (std::size_t i = 0; i < n; ++i) {
        if (nibbles[i] == 0) throw FormatError("dequantize: fp4 code 0 is unused");
        // k/7 first so that k = +-7 yields exactly +-scale.
        const float level = static_cast<float>(static_cast<int>(nibbles[i]) - 8) /
                            static_cast<float>(kFp4GridLevels);
        Y[i] = q.scale * level;
      }
      break;
    }
    case QuantScheme::nf4: {
      const auto nibbles = unpack_nibbles(q.codes, n);
      const auto& table = nf4_codebook();
      for (std::size_t i = 0; i < n; ++i) Y[i] = q.scale * table[nibbles[i]];
      break;
    }
  }
  return out;
}

std::vector<TensorF> dequantize_all(const ActivationBatch& batch) {
  std::vector<TensorF> out;
  out.reserve(batch.taps.size());
  for (const auto& q : batch.taps) out.push_back(dequantize(q));
  return out;
}

}  // namespace mobillm
