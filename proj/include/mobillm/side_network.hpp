#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mobillm/backbone.hpp"
#include "mobillm/quant.hpp"
#include "mobillm/tensor.hpp"

namespace mobillm {

enum class Activation : std::uint8_t { gelu = 0, relu = 1 };

std::string_view to_string(Activation a);
std::optional<Activation> parse_activation(std::string_view text);

struct SideConfig {
  std::uint32_t hidden = 32;       // H, must match the backbone
  std::uint32_t bottleneck = 8;    // m < H
  std::uint32_t adapters = 4;      // M, one per backbone block
  std::uint32_t classes = 2;       // head width
  Activation activation = Activation::gelu;
  double init_std = 0.02;

  void validate() const;
  bool operator==(const SideConfig&) const = default;
};

template <typename T>
struct AdapterParams {
  Tensor<T> w_down;    // [H, m]
  Tensor<T> w_up;      // [m, H]
  Tensor<T> ln_gamma;  // [H]
  Tensor<T> ln_beta;   // [H]

  bool operator==(const AdapterParams&) const = default;
};

// The complete trainable state. Gradients use the same type.
template <typename T>
struct SideParams {
  SideConfig config;
  std::vector<AdapterParams<T>> adapters;
  Tensor<T> head_weight;  // [H, C]
  Tensor<T> head_bias;    // [C]
  Tensor<T> gate;         // [1], logit g of the backbone/side mix

  // Every tensor in checkpoint order.
  std::vector<Tensor<T>*> tensors();
  std::vector<const Tensor<T>*> tensors() const;

  bool operator==(const SideParams&) const = default;
};

// Zeroed tensors with the shapes implied by `config`.
template <typename T>
SideParams<T> zero_side_params(const SideConfig& config);

// W_down, W_up ~ N(0, init_std); LN gains 1, offsets 0; head and gate 0.
template <typename T>
SideParams<T> init_side(const SideConfig& config, std::uint64_t seed);

// σ(h W_down) W_up
template <typename T>
Tensor<T> adapter_core(const Tensor<T>& h, const AdapterParams<T>& p, Activation activation);

template <typename T>
struct AdapterCache {
  Tensor<T> input;        // s_l + b_{l+1}
  Tensor<T> pre;          // input · W_down
  Tensor<T> activated;    // σ(pre)
  LayerNormCache<T> ln;
};

template <typename T>
struct SideCache {
  SideConfig config;
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::vector<AdapterCache<T>> adapters;
  Tensor<T> side_out;        // s_M
  Tensor<T> backbone_final;  // last dequantized tap
  Tensor<T> pooled;          // [B, H]
  T gate_sigmoid = 0;
  bool consumed = false;
};

template <typename T>
struct SideForwardResult {
  Tensor<T> logits;  // [B, C]
  std::optional<SideCache<T>> cache;
};

// taps are dequantized activations. With M + 1 taps the first is the
// embedding output and seeds s_0; with M taps s_0 is zero. For each block
//   s_{l+1} = LN_l(core_l(s_l + b_{l+1}) + s_l + b_{l+1})
// then z = sigmoid(g) b_final + (1 - sigmoid(g)) s_M and
// logits = mean_pool(z) W_head + b_head.
template <typename T>
SideForwardResult<T> side_forward(std::span<const Tensor<T>> taps, const SideParams<T>& params,
                                  bool training);

// Reverse-mode gradients for every parameter. Taps are constants. The cache
// is single-use; replaying it, or pairing it with differently shaped params
// or d_logits, throws StateError.
template <typename T>
SideParams<T> side_backward(SideCache<T>& cache, const Tensor<T>& d_logits,
                            const SideParams<T>& params);

// Device-side prediction path: forward_collect, quantize + dequantize each
// tap under `scheme`, then side_forward without a cache. Produces exactly
// the logits the server computes from the same ActBatch.
TensorF combined_infer(const BackboneWeights& backbone, const SideParams<float>& side,
                       const TokenBatch& tokens, QuantScheme scheme);

// Fraction of rows whose argmax equals the label (ties pick the lower class).
double accuracy(const TensorF& logits, std::span<const std::uint32_t> labels);

// Checkpoint: "MBSN" | u16 version | u32 H, m, M, C | u8 activation |
// f32 gate | per adapter W_down, W_up, ln_gamma, ln_beta | head weight,
// head bias; little-endian f32.
inline constexpr std::uint16_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const SideParams<float>& params);
SideParams<float> decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const std::string& path, const SideParams<float>& params);
SideParams<float> load_checkpoint(const std::string& path);
// Stored H, m, M, C must equal `expected` (DimensionError otherwise).
SideParams<float> load_checkpoint(const std::string& path, const SideConfig& expected);

}  // namespace mobillm
