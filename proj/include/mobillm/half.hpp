#pragma once

#include <cstdint>

namespace mobillm {

inline constexpr float kHalfMax = 65504.0f;

// float -> binary16 bits, round-to-nearest-even, saturating at +-65504.
std::uint16_t float_to_half_bits(float value);
float half_bits_to_float(std::uint16_t bits);

inline float f16_round(float value) {
  return half_bits_to_float(float_to_half_bits(value));
}

}  // namespace mobillm
