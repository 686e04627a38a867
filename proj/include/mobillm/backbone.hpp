#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mobillm/tensor.hpp"

namespace mobillm {

// Frozen GPT-style decoder. Layers follow the post-LN composition
//   u = LN1(MSA(b) + b),  b' = LN2(FFN(u) + u)
// with causal scaled dot-product attention and learned positions.
struct BackboneConfig {
  std::uint32_t vocab_size = 16;
  std::uint32_t hidden = 32;
  std::uint32_t layers = 4;
  std::uint32_t heads = 4;
  std::uint32_t ffn_dim = 128;
  std::uint32_t max_seq = 16;
  // Layer indices (1-based, ascending, last == layers) after which a tap
  // is emitted.
  std::vector<std::uint32_t> block_cuts = {1, 2, 3, 4};
  // Emit the embedding output as tap 0.
  bool tap_embedding = true;

  std::size_t blocks() const { return block_cuts.size(); }
  // Taps per forward pass (the γ of the memory analysis).
  std::size_t tap_count() const { return block_cuts.size() + (tap_embedding ? 1 : 0); }

  // Throws ConfigError describing the first violated constraint.
  void validate() const;

  bool operator==(const BackboneConfig&) const = default;
};

// Splits `layers` into `blocks` contiguous groups of near-equal size.
std::vector<std::uint32_t> uniform_cuts(std::uint32_t layers, std::uint32_t blocks);

// FNV-1a over the serialized config; identifies a backbone in the handshake.
std::uint64_t config_digest(const BackboneConfig& config);

struct LayerWeights {
  TensorF wq, bq, wk, bk, wv, bv, wo, bo;
  TensorF ln1_gamma, ln1_beta;
  TensorF w1, b1, w2, b2;
  TensorF ln2_gamma, ln2_beta;

  bool operator==(const LayerWeights&) const = default;
};

struct BackboneWeights {
  BackboneConfig config;
  TensorF token_embedding;  // [vocab, H]
  TensorF position_embedding;  // [max_seq, H]
  std::vector<LayerWeights> layers;
  TensorF final_ln_gamma, final_ln_beta;

  bool operator==(const BackboneWeights&) const = default;
};

// Token ids, row-major [batch, seq].
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::vector<std::uint32_t> ids;

  bool operator==(const TokenBatch&) const = default;
};

struct Tap {
  std::uint32_t block_index = 0;  // 0 = embedding, otherwise the layer count so far
  TensorF activation;             // [B, S, H]
};

struct TapSet {
  std::vector<Tap> taps;
  TensorF final_output;  // last layer output after the final layer norm
};

inline constexpr float kLayerNormEps = 1e-5f;

// N(0, 0.02) matrices and embeddings, zero biases, unit LN gains. Draw
// order follows the weight-file tensor order.
BackboneWeights init_backbone(const BackboneConfig& config, std::uint64_t seed);

TensorF attention_forward(const TensorF& x, const LayerWeights& w, std::size_t heads);
TensorF layer_forward(const TensorF& x, const LayerWeights& w, const BackboneConfig& config);

TapSet forward_collect(const BackboneWeights& weights, const TokenBatch& tokens);

// Visits every tensor in weight-file order.
template <typename W, typename F>
void for_each_tensor(W& weights, F&& fn) {
  fn(weights.token_embedding);
  fn(weights.position_embedding);
  for (auto& l : weights.layers) {
    for (auto* t : {&l.wq, &l.bq, &l.wk, &l.bk, &l.wv, &l.bv, &l.wo, &l.bo, &l.ln1_gamma,
                    &l.ln1_beta, &l.w1, &l.b1, &l.w2, &l.b2, &l.ln2_gamma, &l.ln2_beta}) {
      fn(*t);
    }
  }
  fn(weights.final_ln_gamma);
  fn(weights.final_ln_beta);
}

// Weight file: "MBWT" | u16 version | 7 x u32 (vocab, H, L, heads, ffn_dim,
// S_max, M) | M x u32 block cuts | u8 flags (bit 0: tap_embedding) | f32
// tensors in for_each_tensor order, all little-endian.
inline constexpr std::uint16_t kWeightFileVersion = 1;

std::vector<std::uint8_t> encode_weights(const BackboneWeights& weights);
BackboneWeights decode_weights(std::span<const std::uint8_t> bytes);
void save_weights(const std::string& path, const BackboneWeights& weights);
BackboneWeights load_weights(const std::string& path);
// As above, but the stored config must equal `expected` (DimensionError).
BackboneWeights load_weights(const std::string& path, const BackboneConfig& expected);

}  // namespace mobillm
