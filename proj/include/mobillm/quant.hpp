#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mobillm/tensor.hpp"

namespace mobillm {

// Wire values are stable; they appear in ActBatch tap headers.
enum class QuantScheme : std::uint8_t {
  none_fp16 = 0,
  fp8_e4m3 = 1,
  fp4_grid = 2,
  nf4 = 3,
};

std::string_view to_string(QuantScheme scheme);
// Accepts the CLI spellings fp16, fp8, fp4, nf4 and the enum names.
std::optional<QuantScheme> parse_scheme(std::string_view text);
QuantScheme scheme_from_wire(std::uint8_t value);
unsigned bits_per_element(QuantScheme scheme);

// A per-tensor absmax-scaled activation. For the 4-bit schemes element i
// lives in the low nibble of byte i/2 when i is even and the high nibble
// when odd; fp8 uses one byte per element, fp16 two (little-endian).
struct QuantizedActivation {
  QuantScheme scheme = QuantScheme::none_fp16;
  Shape shape;
  float scale = 1.0f;
  std::vector<std::uint8_t> codes;

  bool operator==(const QuantizedActivation&) const = default;
};

// 16 sorted levels in [-1, 1]: 7 negative and 8 positive evenly spaced
// standard-normal quantiles (outermost probability 0.9677083) plus an exact
// zero, normalized by the largest magnitude.
const std::array<float, 16>& nf4_codebook();
inline constexpr std::uint8_t kNf4ZeroIndex = 7;

// Signed absmax grid: level k in [-7, 7] is stored as nibble k + 8 and
// dequantizes to scale * (k / 7).
inline constexpr int kFp4GridLevels = 7;

std::uint8_t fp8_e4m3_encode(float value);  // nearest-even, saturates at 448
float fp8_e4m3_decode(std::uint8_t code);

std::uint8_t nf4_nearest_index(float normalized);

std::vector<std::uint8_t> pack_nibbles(std::span<const std::uint8_t> nibbles);
std::vector<std::uint8_t> unpack_nibbles(std::span<const std::uint8_t> packed, std::size_t count);

QuantizedActivation quantize(const TensorF& x, QuantScheme scheme);
TensorF dequantize(const QuantizedActivation& q);

std::size_t code_bytes(std::size_t elements, QuantScheme scheme);

// Per-tap header on the wire besides the 4-byte scale: block index u16,
// scheme u8, shape 3 x u32, code length u32.
inline constexpr std::size_t kTapHeaderBytes = 2 + 1 + 12 + 4;

// Bytes one quantized tap occupies in an ActBatch payload:
// codes + 4 (scale) + kTapHeaderBytes.
std::size_t payload_bytes(const Shape& shape, QuantScheme scheme);

// One training step's worth of device output: quantized taps, labels and a
// batch index. This is the body of the ActBatch wire message.
struct ActivationBatch {
  std::uint64_t batch_id = 0;
  std::vector<std::uint32_t> labels;
  std::vector<std::uint16_t> block_indices;
  std::vector<QuantizedActivation> taps;

  bool operator==(const ActivationBatch&) const = default;
};

std::vector<TensorF> dequantize_all(const ActivationBatch& batch);

}  // namespace mobillm
