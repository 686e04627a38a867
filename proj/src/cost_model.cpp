#include "mobillm/cost_model.hpp"

#include <algorithm>
#include <cmath>

#include "mobillm/error.hpp"
#include "mobillm/wire.hpp"

namespace mobillm {

void ModelSpec::validate() const {
  if (params <= 0) throw ConfigError("model: params must be positive");
  if (layers == 0 || hidden == 0 || heads == 0 || seq == 0 || batch == 0) {
    throw ConfigError("model: layers, hidden, heads, seq and batch must be positive");
  }
  if (dtype_bytes != 2 && dtype_bytes != 4) throw ConfigError("model: dtype bytes must be 2 or 4");
  if (gamma == 0 || gamma > layers + 1) throw ConfigError("model: gamma must be in [1, L + 1]");
  if (optimizer_bytes_per_param < 0) throw ConfigError("model: optimizer bytes must be >= 0");
}

double ModelSpec::side_params() const {
  if (trainable_params > 0) return trainable_params;
  const double h = static_cast<double>(hidden);
  const double m = static_cast<double>(side_bottleneck);
  const double c = static_cast<double>(classes);
  // One adapter per tap: W_down, W_up, LN gain and offset. Head and gate.
  return static_cast<double>(gamma) * (2 * h * m + 2 * h) + h * c + c + 1;
}

std::optional<ModelSpec> model_preset(std::string_view name) {
  ModelSpec s;
  if (name == "opt350m") {
    s.name = "opt350m";
    s.params = 331e6;
    s.layers = 24;
    s.hidden = 1024;
    s.heads = 16;
    s.ffn_dim = 4096;
  } else if (name == "opt1.3b") {
    s.name = "opt1.3b";
    s.params = 1.316e9;
    s.layers = 24;
    s.hidden = 2048;
    s.heads = 32;
    s.ffn_dim = 8192;
  } else {
    return std::nullopt;
  }
  s.gamma = 24;
  return s;
}

std::string_view to_string(MemoryMode mode) {
  switch (mode) {
    case MemoryMode::full_ft: return "full_ft";
    case MemoryMode::side_local: return "side_local";
    case MemoryMode::mobillm: return "mobillm";
    case MemoryMode::inference: return "inference";
  }
  return "?";
}

std::optional<MemoryMode> parse_memory_mode(std::string_view text) {
  for (auto m : {MemoryMode::full_ft, MemoryMode::side_local, MemoryMode::mobillm, MemoryMode::inference}) {
    if (to_string(m) == text) return m;
  }
  return std::nullopt;
}

nlohmann::json to_json(const CostReport& r) {
  return {{"weights_bytes", r.weights_bytes},
          {"activation_bytes", r.activation_bytes},
          {"optimizer_bytes", r.optimizer_bytes},
          {"total_bytes", r.total_bytes},
          {"payload_bytes_per_iter", r.payload_bytes_per_iter},
          {"est_iter_time_s", r.est_iter_time_s}};
}

CostReport device_memory_estimate(const ModelSpec& spec, MemoryMode mode) {
  spec.validate();
  const double b = static_cast<double>(spec.batch);
  const double s = static_cast<double>(spec.seq);
  const double h = static_cast<double>(spec.hidden);
  const double dt = static_cast<double>(spec.dtype_bytes);
  const double per_layer =
      b * s * (spec.hidden_coefficient * h + spec.score_coefficient * spec.heads * s) * dt;
  const double taps = static_cast<double>(spec.gamma) * b * s * h * dt;

  CostReport r;
  r.weights_bytes = spec.params * dt;
  switch (mode) {
    case MemoryMode::full_ft:
      r.activation_bytes = static_cast<double>(spec.layers) * per_layer;
      r.optimizer_bytes = spec.params * spec.optimizer_bytes_per_param;
      break;
    case MemoryMode::side_local: {
      const double m = static_cast<double>(spec.side_bottleneck);
      r.weights_bytes += spec.side_params() * dt;
      // Taps plus each adapter's input, bottleneck pair and LN output.
      r.activation_bytes = taps + static_cast<double>(spec.gamma) * b * s * (2 * h + 2 * m) * dt;
      r.optimizer_bytes = spec.side_params() * spec.optimizer_bytes_per_param;
      break;
    }
    case MemoryMode::mobillm:
      r.activation_bytes = taps;
      break;
    case MemoryMode::inference:
      // Intermediates are freed layer by layer.
      r.activation_bytes = per_layer;
      break;
  }
  r.total_bytes = r.weights_bytes + r.activation_bytes + r.optimizer_bytes;
  if (mode == MemoryMode::mobillm) r.payload_bytes_per_iter = payload_per_iteration(spec, QuantScheme::none_fp16);
  return r;
}

PayloadBreakdown payload_breakdown(const ModelSpec& spec, QuantScheme scheme) {
  spec.validate();
  const std::size_t elements = spec.batch * spec.seq * spec.hidden;
  const double gamma = static_cast<double>(spec.gamma);
  PayloadBreakdown p;
  p.codes = gamma * static_cast<double>(code_bytes(elements, scheme));
  p.tap_headers = gamma * static_cast<double>(kTapHeaderBytes + 4);
  p.labels = 4.0 * static_cast<double>(spec.batch);
  p.envelope = static_cast<double>(wire::kFrameOverheadBytes + 8 + 4 + 2);
  return p;
}

double payload_per_iteration(const ModelSpec& spec, QuantScheme scheme) {
  return payload_breakdown(spec, scheme).total();
}

double iteration_time_estimate(double t_fwd_device_s, double payload_bytes, double rate_bps,
                               double t_server_s) {
  if (!(rate_bps > 0)) throw ConfigError("rate must be positive");
  const double t_send = std::isinf(rate_bps) ? 0.0 : payload_bytes * 8.0 / rate_bps;
  return std::max({t_fwd_device_s, t_send, t_server_s});
}

}  // namespace mobillm
