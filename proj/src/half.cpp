#include "mobillm/half.hpp"

#include <bit>
#include <cmath>

namespace mobillm {

std::uint16_t float_to_half_bits(float value) {
  const std::uint32_t bits = std::bit_cast<std::uint32_t>(value);
  const std::uint16_t sign = static_cast<std::uint16_t>((bits >> 16) & 0x8000u);
  const std::uint32_t abs_bits = bits & 0x7FFFFFFFu;

  if (abs_bits > 0x7F800000u) return static_cast<std::uint16_t>(sign | 0x7E00u);  // NaN
  // 65520 is the first magnitude that would round up past 65504.
  if (abs_bits >= 0x477FF000u) return static_cast<std::uint16_t>(sign | 0x7BFFu);

  const int exponent = static_cast<int>(abs_bits >> 23) - 127;
  std::uint32_t mantissa = abs_bits & 0x7FFFFFu;

  if (exponent >= -14) {
    // Normal half: keep 10 of 23 mantissa bits, round to nearest even.
    std::uint32_t half = static_cast<std::uint32_t>(exponent + 15) << 10 | (mantissa >> 13);
    const std::uint32_t rest = mantissa & 0x1FFFu;
    if (rest > 0x1000u || (rest == 0x1000u && (half & 1u))) ++half;  // carry may bump exponent
    return static_cast<std::uint16_t>(sign | half);
  }
  if (exponent < -25) return sign;  // below half of the smallest subnormal
  // Subnormal half: value = m * 2^-24 with the implicit bit restored.
  mantissa |= 0x800000u;
  const int drop = -exponent - 1;  // 14..24
  std::uint32_t half = mantissa >> drop;
  const std::uint32_t rest = mantissa & ((1u << drop) - 1u);
  const std::uint32_t halfway = 1u << (drop - 1);
  if (rest > halfway || (rest == halfway && (half & 1u))) ++half;
  return static_cast<std::uint16_t>(sign | half);
}

float half_bits_to_float(std::uint16_t bits) {
  const float sign = (bits & 0x8000u) ? -1.0f : 1.0f;
  const int exponent = (bits >> 10) & 0x1F;
  const int mantissa = bits & 0x3FF;
  if (exponent == 0) return sign * std::ldexp(static_cast<float>(mantissa), -24);
  if (exponent == 31) return mantissa ? std::nanf("") : sign * INFINITY;
  return sign * std::ldexp(static_cast<float>(mantissa | 0x400), exponent - 25);
}

}  // namespace mobillm
