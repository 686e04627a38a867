#include "mobillm/side_network.hpp"

#include <cmath>

#include "mobillm/bytes.hpp"
#include "mobillm/rng.hpp"

namespace mobillm {

std::string_view to_string(Activation a) { return a == Activation::relu ? "relu" : "gelu"; }

std::optional<Activation> parse_activation(std::string_view text) {
  if (text == "gelu") return Activation::gelu;
  if (text == "relu") return Activation::relu;
  return std::nullopt;
}

void SideConfig::validate() const {
  if (hidden == 0 || bottleneck == 0 || adapters == 0 || classes == 0) {
    throw ConfigError("side network: all extents must be positive");
  }
  if (bottleneck >= hidden) {
    throw ConfigError("side network: bottleneck " + std::to_string(bottleneck) +
                      " must be smaller than hidden " + std::to_string(hidden));
  }
  if (!(init_std >= 0.0)) throw ConfigError("side network: init std must be >= 0");
}

template <typename T>
std::vector<Tensor<T>*> SideParams<T>::tensors() {
  std::vector<Tensor<T>*> out;
  for (auto& a : adapters) {
    out.insert(out.end(), {&a.w_down, &a.w_up, &a.ln_gamma, &a.ln_beta});
  }
  out.insert(out.end(), {&head_weight, &head_bias, &gate});
  return out;
}

template <typename T>
std::vector<const Tensor<T>*> SideParams<T>::tensors() const {
  std::vector<const Tensor<T>*> out;
  for (const auto& a : adapters) {
    out.insert(out.end(), {&a.w_down, &a.w_up, &a.ln_gamma, &a.ln_beta});
  }
  out.insert(out.end(), {&head_weight, &head_bias, &gate});
  return out;
}

template <typename T>
SideParams<T> zero_side_params(const SideConfig& config) {
  config.validate();
  const std::size_t H = config.hidden, m = config.bottleneck;
  SideParams<T> p;
  p.config = config;
  p.adapters.resize(config.adapters);
  for (auto& a : p.adapters) {
    a.w_down = Tensor<T>({H, m});
    a.w_up = Tensor<T>({m, H});
    a.ln_gamma = Tensor<T>({H});
    a.ln_beta = Tensor<T>({H});
  }
  p.head_weight = Tensor<T>({H, config.classes});
  p.head_bias = Tensor<T>({config.classes});
  p.gate = Tensor<T>({1});
  return p;
}

template <typename T>
SideParams<T> init_side(const SideConfig& config, std::uint64_t seed) {
  SideParams<T> p = zero_side_params<T>(config);
  Rng rng(seed);
  for (auto& a : p.adapters) {
    for (auto& v : a.w_down.data()) v = static_cast<T>(config.init_std * rng.gaussian());
    for (auto& v : a.w_up.data()) v = static_cast<T>(config.init_std * rng.gaussian());
    a.ln_gamma = Tensor<T>::full({config.hidden}, T{1});
  }
  return p;
}

namespace {

Nonlinearity as_nonlinearity(Activation a) {
  return a == Activation::relu ? Nonlinearity::relu : Nonlinearity::gelu;
}

template <typename T>
T sigmoid(T x) {
  return static_cast<T>(1) / (static_cast<T>(1) + std::exp(-x));
}

}  // namespace

template <typename T>
Tensor<T> adapter_core(const Tensor<T>& h, const AdapterParams<T>& p, Activation activation) {
  return matmul(nonlinearity(matmul(h, p.w_down), as_nonlinearity(activation)), p.w_up);
}

template <typename T>
SideForwardResult<T> side_forward(std::span<const Tensor<T>> taps, const SideParams<T>& params,
                                  bool training) {
  const SideConfig& c = params.config;
  const std::size_t M = params.adapters.size();
  const bool has_s0 = taps.size() == M + 1;
  if (!has_s0 && taps.size() != M) {
    throw ConfigError("side_forward: " + std::to_string(taps.size()) + " taps for " +
                      std::to_string(M) + " adapters");
  }
  for (const auto& t : taps) {
    if (t.rank() != 3 || t.dim(2) != c.hidden || t.shape() != taps.front().shape()) {
      throw DimensionError("side_forward: tap shape " + shape_string(t.shape()) +
                           " incompatible with hidden " + std::to_string(c.hidden));
    }
  }
  const Nonlinearity act = as_nonlinearity(c.activation);
  const std::size_t first_block = has_s0 ? 1 : 0;

  SideForwardResult<T> result;
  SideCache<T> cache;
  cache.config = c;
  cache.batch = taps.front().dim(0);
  cache.seq = taps.front().dim(1);
  cache.adapters.resize(M);

  Tensor<T> s = has_s0 ? taps[0] : Tensor<T>(taps.front().shape());
  for (std::size_t l = 0; l < M; ++l) {
    const AdapterParams<T>& p = params.adapters[l];
    AdapterCache<T>& ac = cache.adapters[l];
    Tensor<T> input = add(s, taps[first_block + l]);
    Tensor<T> pre = matmul(input, p.w_down);
    Tensor<T> activated = nonlinearity(pre, act);
    Tensor<T> residual = matmul(activated, p.w_up);
    add_inplace(residual, input);
    s = layer_norm(residual, p.ln_gamma, p.ln_beta, static_cast<T>(kLayerNormEps), ac.ln);
    if (training) {
      ac.input = std::move(input);
      ac.pre = std::move(pre);
      ac.activated = std::move(activated);
    }
  }

  const Tensor<T>& final_tap = taps.back();
  const T g = sigmoid(params.gate[0]);
  Tensor<T> z(s.shape());
  for (std::size_t i = 0; i < z.size(); ++i) {
    z[i] = g * final_tap[i] + (static_cast<T>(1) - g) * s[i];
  }
  Tensor<T> pooled = mean_pool(z);
  result.logits = matmul(pooled, params.head_weight);
  add_bias_inplace(result.logits, params.head_bias);

  if (training) {
    cache.side_out = std::move(s);
    cache.backbone_final = final_tap;
    cache.pooled = std::move(pooled);
    cache.gate_sigmoid = g;
    result.cache = std::move(cache);
  }
  return result;
}

TensorF combined_infer(const BackboneWeights& backbone, const SideParams<float>& side,
                       const TokenBatch& tokens, QuantScheme scheme) {
  if (backbone.config.hidden != side.config.hidden ||
      backbone.config.blocks() != side.config.adapters) {
    throw ConfigError("combined_infer: side network (H=" + std::to_string(side.config.hidden) +
                      ", M=" + std::to_string(side.config.adapters) +
                      ") does not fit the backbone (H=" + std::to_string(backbone.config.hidden) +
                      ", M=" + std::to_string(backbone.config.blocks()) + ")");
  }
  const TapSet taps = forward_collect(backbone, tokens);
  std::vector<TensorF> restored;
  restored.reserve(taps.taps.size());
  for (const auto& tap : taps.taps) restored.push_back(dequantize(quantize(tap.activation, scheme)));
  return side_forward<float>(restored, side, false).logits;
}

std::vector<std::uint8_t> encode_checkpoint(const SideParams<float>& params) {
  const SideConfig& c = params.config;
  ByteWriter w;
  w.tag("MBSN");
  w.u16(kCheckpointVersion);
  w.u32(c.hidden);
  w.u32(c.bottleneck);
  w.u32(c.adapters);
  w.u32(c.classes);
  w.u8(static_cast<std::uint8_t>(c.activation));
  w.f32(params.gate[0]);
  for (const auto& a : params.adapters) {
    w.f32_tensor(a.w_down);
    w.f32_tensor(a.w_up);
    w.f32_tensor(a.ln_gamma);
    w.f32_tensor(a.ln_beta);
  }
  w.f32_tensor(params.head_weight);
  w.f32_tensor(params.head_bias);
  return w.take();
}

SideParams<float> decode_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (!r.tag_matches("MBSN")) throw FormatError("checkpoint: bad magic");
  const std::uint16_t version = r.u16();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  SideConfig c;
  c.hidden = r.u32();
  c.bottleneck = r.u32();
  c.adapters = r.u32();
  c.classes = r.u32();
  const std::uint8_t act = r.u8();
  if (act > 1) throw FormatError("checkpoint: unknown activation " + std::to_string(act));
  c.activation = static_cast<Activation>(act);
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
  SideParams<float> p = zero_side_params<float>(c);
  p.gate[0] = r.f32();
  for (auto& a : p.adapters) {
    a.w_down = r.f32_tensor(a.w_down.shape());
    a.w_up = r.f32_tensor(a.w_up.shape());
    a.ln_gamma = r.f32_tensor(a.ln_gamma.shape());
    a.ln_beta = r.f32_tensor(a.ln_beta.shape());
  }
  p.head_weight = r.f32_tensor(p.head_weight.shape());
  p.head_bias = r.f32_tensor(p.head_bias.shape());
  if (r.remaining() != 0) throw FormatError("checkpoint: trailing bytes");
  return p;
}

void save_checkpoint(const std::string& path, const SideParams<float>& params) {
  write_file(path, encode_checkpoint(params));
}

SideParams<float> load_checkpoint(const std::string& path) {
  return decode_checkpoint(read_file(path));
}

SideParams<float> load_checkpoint(const std::string& path, const SideConfig& expected) {
  SideParams<float> p = load_checkpoint(path);
  const SideConfig& c = p.config;
  if (c.hidden != expected.hidden || c.bottleneck != expected.bottleneck ||
      c.adapters != expected.adapters || c.classes != expected.classes) {
    throw DimensionError("checkpoint " + path + ": stored shape (H=" + std::to_string(c.hidden) +
                         ", m=" + std::to_string(c.bottleneck) + ", M=" +
                         std::to_string(c.adapters) + ") does not match (H=" +
                         std::to_string(expected.hidden) + ", m=" +
                         std::to_string(expected.bottleneck) + ", M=" +
                         std::to_string(expected.adapters) + ")");
  }
  return p;
}

#define MOBILLM_INSTANTIATE(T)                                                              \
  template struct SideParams<T>;                                                            \
  template SideParams<T> zero_side_params<T>(const SideConfig&);                            \
  template SideParams<T> init_side<T>(const SideConfig&, std::uint64_t);                    \
  template Tensor<T> adapter_core(const Tensor<T>&, const AdapterParams<T>&, Activation);   \
  template SideForwardResult<T> side_forward(std::span<const Tensor<T>>, const SideParams<T>&, \
                                             bool);

MOBILLM_INSTANTIATE(float)
MOBILLM_INSTANTIATE(double)

#undef MOBILLM_INSTANTIATE

double accuracy(const TensorF& logits, std::span<const std::uint32_t> labels) {
  const std::size_t B = logits.dim(0), C = logits.dim(1);
  if (B == 0) return 0.0;
  std::size_t hits = 0;
  for (std::size_t b = 0; b < B; ++b) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < C; ++c) {
      if (logits[b * C + c] > logits[b * C + best]) best = c;
    }
    hits += best == labels[b] ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(B);
}

}  // namespace mobillm
