#include "mobillm/backbone.hpp"

#include <cmath>
#include <limits>

#include "mobillm/bytes.hpp"
#include "mobillm/rng.hpp"

namespace mobillm {

void BackboneConfig::validate() const {
  if (vocab_size == 0 || hidden == 0 || layers == 0 || heads == 0 || ffn_dim == 0 || max_seq == 0) {
    throw ConfigError("backbone: all extents must be positive");
  }
  if (hidden % heads != 0) {
    throw ConfigError("backbone: hidden " + std::to_string(hidden) + " not divisible by heads " +
                      std::to_string(heads));
  }
  if (block_cuts.empty() || block_cuts.size() > layers) {
    throw ConfigError("backbone: need 1 <= M <= L block cuts, got " + std::to_string(block_cuts.size()));
  }
  for (std::size_t i = 0; i < block_cuts.size(); ++i) {
    if (block_cuts[i] == 0 || (i > 0 && block_cuts[i] <= block_cuts[i - 1])) {
      throw ConfigError("backbone: block cuts must be strictly ascending and positive");
    }
  }
  if (block_cuts.back() != layers) {
    throw ConfigError("backbone: last block cut must equal the layer count");
  }
}

std::vector<std::uint32_t> uniform_cuts(std::uint32_t layers, std::uint32_t blocks) {
  if (blocks == 0 || blocks > layers) {
    throw ConfigError("uniform cuts: need 1 <= M <= L (M=" + std::to_string(blocks) +
                      ", L=" + std::to_string(layers) + ")");
  }
  std::vector<std::uint32_t> cuts;
  for (std::uint32_t b = 1; b <= blocks; ++b) {
    cuts.push_back(static_cast<std::uint32_t>((static_cast<std::uint64_t>(layers) * b) / blocks));
  }
  return cuts;
}

namespace {

void write_config(ByteWriter& w, const BackboneConfig& c) {
  for (std::uint32_t v : {c.vocab_size, c.hidden, c.layers, c.heads, c.ffn_dim, c.max_seq,
                          static_cast<std::uint32_t>(c.block_cuts.size())}) {
    w.u32(v);
  }
  for (std::uint32_t cut : c.block_cuts) w.u32(cut);
  w.u8(c.tap_embedding ? 1 : 0);
}

}  // namespace

std::uint64_t config_digest(const BackboneConfig& config) {
  ByteWriter w;
  write_config(w, config);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : w.buffer()) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

// Zero matrices, zero biases, unit LN gains.
BackboneWeights backbone_skeleton(const BackboneConfig& config) {
  config.validate();
  const std::size_t H = config.hidden, F = config.ffn_dim;
  BackboneWeights w;
  w.config = config;
  w.token_embedding = TensorF({config.vocab_size, H});
  w.position_embedding = TensorF({config.max_seq, H});
  w.layers.resize(config.layers);
  for (auto& l : w.layers) {
    l.wq = TensorF({H, H});
    l.bq = TensorF({H});
    l.wk = TensorF({H, H});
    l.bk = TensorF({H});
    l.wv = TensorF({H, H});
    l.bv = TensorF({H});
    l.wo = TensorF({H, H});
    l.bo = TensorF({H});
    l.ln1_gamma = TensorF::full({H}, 1.0f);
    l.ln1_beta = TensorF({H});
    l.w1 = TensorF({H, F});
    l.b1 = TensorF({F});
    l.w2 = TensorF({F, H});
    l.b2 = TensorF({H});
    l.ln2_gamma = TensorF::full({H}, 1.0f);
    l.ln2_beta = TensorF({H});
  }
  w.final_ln_gamma = TensorF::full({H}, 1.0f);
  w.final_ln_beta = TensorF({H});
  return w;
}

}  // namespace

BackboneWeights init_backbone(const BackboneConfig& config, std::uint64_t seed) {
  BackboneWeights w = backbone_skeleton(config);
  // Only rank-2 tensors (matrices and embeddings) are random.
  Rng rng(seed);
  for_each_tensor(w, [&](TensorF& t) {
    if (t.rank() == 2) {
      for (auto& v : t.data()) v = static_cast<float>(0.02 * rng.gaussian());
    }
  });
  return w;
}

TensorF attention_forward(const TensorF& x, const LayerWeights& w, std::size_t heads) {
  const std::size_t B = x.dim(0), S = x.dim(1), H = x.dim(2);
  const std::size_t d = H / heads;
  TensorF q = matmul(x, w.wq);
  add_bias_inplace(q, w.bq);
  TensorF k = matmul(x, w.wk);
  add_bias_inplace(k, w.bk);
  TensorF v = matmul(x, w.wv);
  add_bias_inplace(v, w.bv);

  const float scale = 1.0f / std::sqrt(static_cast<float>(d));
  TensorF ctx({B, S, H});
  std::vector<float> scores(S);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < S; ++i) {
        const float* qi = &q[(b * S + i) * H + h * d];
        float mx = -std::numeric_limits<float>::infinity();
        for (std::size_t j = 0; j <= i; ++j) {
          const float* kj = &k[(b * S + j) * H + h * d];
          float dot = 0.0f;
          for (std::size_t t = 0; t < d; ++t) dot += qi[t] * kj[t];
          scores[j] = dot * scale;
          mx = std::max(mx, scores[j]);
        }
        float total = 0.0f;
        for (std::size_t j = 0; j <= i; ++j) {
          scores[j] = std::exp(scores[j] - mx);
          total += scores[j];
        }
        float* out = &ctx[(b * S + i) * H + h * d];
        for (std::size_t j = 0; j <= i; ++j) {
          const float p = scores[j] / total;
          const float* vj = &v[(b * S + j) * H + h * d];
          for (std::size_t t = 0; t < d; ++t) out[t] += p * vj[t];
        }
      }
    }
  }
  TensorF o = matmul(ctx, w.wo);
  add_bias_inplace(o, w.bo);
  return o;
}

TensorF layer_forward(const TensorF& x, const LayerWeights& w, const BackboneConfig& config) {
  if (x.rank() != 3 || x.dim(2) != config.hidden) {
    throw DimensionError("layer_forward: expected [B, S, " + std::to_string(config.hidden) +
                         "], got " + shape_string(x.shape()));
  }
  if (x.dim(1) > config.max_seq) {
    throw ConfigError("layer_forward: sequence length " + std::to_string(x.dim(1)) +
                      " exceeds max_seq " + std::to_string(config.max_seq));
  }
  TensorF attn = attention_forward(x, w, config.heads);
  add_inplace(attn, x);
  TensorF u = layer_norm(attn, w.ln1_gamma, w.ln1_beta, kLayerNormEps);

  TensorF hidden = matmul(u, w.w1);
  add_bias_inplace(hidden, w.b1);
  hidden = nonlinearity(hidden, Nonlinearity::gelu);
  TensorF ffn = matmul(hidden, w.w2);
  add_bias_inplace(ffn, w.b2);
  add_inplace(ffn, u);
  return layer_norm(ffn, w.ln2_gamma, w.ln2_beta, kLayerNormEps);
}

TapSet forward_collect(const BackboneWeights& weights, const TokenBatch& tokens) {
  const auto& c = weights.config;
  if (tokens.ids.size() != tokens.batch * tokens.seq) {
    throw DimensionError("forward_collect: token count does not match [B, S]");
  }
  if (tokens.seq > c.max_seq) {
    throw ConfigError("forward_collect: sequence length " + std::to_string(tokens.seq) +
                      " exceeds max_seq " + std::to_string(c.max_seq));
  }
  const std::size_t H = c.hidden;
  TensorF x({tokens.batch, tokens.seq, H});
  for (std::size_t b = 0; b < tokens.batch; ++b) {
    for (std::size_t s = 0; s < tokens.seq; ++s) {
      const std::uint32_t id = tokens.ids[b * tokens.seq + s];
      if (id >= c.vocab_size) {
        throw InputError("forward_collect: token id " + std::to_string(id) + " >= vocab size " +
                         std::to_string(c.vocab_size));
      }
      float* out = &x[(b * tokens.seq + s) * H];
      for (std::size_t h = 0; h < H; ++h) {
        out[h] = weights.token_embedding[id * H + h] + weights.position_embedding[s * H + h];
      }
    }
  }

  TapSet result;
  if (c.tap_embedding) result.taps.push_back({0, x});
  std::size_t next_cut = 0;
  for (std::uint32_t l = 0; l < c.layers; ++l) {
    x = layer_forward(x, weights.layers[l], c);
    if (next_cut < c.block_cuts.size() && c.block_cuts[next_cut] == l + 1) {
      result.taps.push_back({l + 1, x});
      ++next_cut;
    }
  }
  result.final_output = layer_norm(x, weights.final_ln_gamma, weights.final_ln_beta, kLayerNormEps);
  return result;
}

std::vector<std::uint8_t> encode_weights(const BackboneWeights& weights) {
  ByteWriter w;
  w.tag("MBWT");
  w.u16(kWeightFileVersion);
  write_config(w, weights.config);
  for_each_tensor(weights, [&](const TensorF& t) { w.f32_tensor(t); });
  return w.take();
}

BackboneWeights decode_weights(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (!r.tag_matches("MBWT")) throw FormatError("weight file: bad magic");
  const std::uint16_t version = r.u16();
  if (version != kWeightFileVersion) {
    throw FormatError("weight file: unsupported version " + std::to_string(version));
  }
  BackboneConfig c;
  c.vocab_size = r.u32();
  c.hidden = r.u32();
  c.layers = r.u32();
  c.heads = r.u32();
  c.ffn_dim = r.u32();
  c.max_seq = r.u32();
  const std::uint32_t m = r.u32();
  if (m > c.layers) throw FormatError("weight file: block count exceeds layer count");
  c.block_cuts.resize(m);
  for (auto& cut : c.block_cuts) cut = r.u32();
  c.tap_embedding = (r.u8() & 1u) != 0;
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("weight file: ") + e.what());
  }
  BackboneWeights w = backbone_skeleton(c);
  for_each_tensor(w, [&](TensorF& t) { t = r.f32_tensor(t.shape()); });
  if (r.remaining() != 0) throw FormatError("weight file: trailing bytes");
  return w;
}

void save_weights(const std::string& path, const BackboneWeights& weights) {
  write_file(path, encode_weights(weights));
}

BackboneWeights load_weights(const std::string& path) { return decode_weights(read_file(path)); }

BackboneWeights load_weights(const std::string& path, const BackboneConfig& expected) {
  BackboneWeights w = load_weights(path);
  if (!(w.config == expected)) {
    throw DimensionError("weight file " + path + ": stored config (H=" +
                         std::to_string(w.config.hidden) + ", L=" + std::to_string(w.config.layers) +
                         ") does not match the requested one (H=" + std::to_string(expected.hidden) +
                         ", L=" + std::to_string(expected.layers) + ")");
  }
  return w;
}

}  // namespace mobillm
