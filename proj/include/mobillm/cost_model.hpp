#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "mobillm/quant.hpp"

namespace mobillm {

// Stored intermediates of one post-LN transformer layer, per token:
// kFullFtHiddenCoefficient * H + kFullFtScoreCoefficient * heads * S.
inline constexpr double kFullFtHiddenCoefficient = 18.0;
inline constexpr double kFullFtScoreCoefficient = 2.0;

struct ModelSpec {
  std::string name = "custom";
  double params = 0;            // P
  std::uint64_t layers = 0;     // L
  std::uint64_t hidden = 0;     // H
  std::uint64_t heads = 0;
  std::uint64_t ffn_dim = 0;
  std::uint64_t seq = 256;      // S
  std::uint64_t batch = 16;     // B
  std::uint64_t dtype_bytes = 2;
  std::uint64_t gamma = 0;      // taps per iteration
  std::uint64_t side_bottleneck = 16;
  std::uint64_t classes = 2;
  double trainable_params = 0;  // side network; 0 derives it from the shape
  double optimizer_bytes_per_param = 8;
  double hidden_coefficient = kFullFtHiddenCoefficient;
  double score_coefficient = kFullFtScoreCoefficient;

  // Throws ConfigError.
  void validate() const;
  // Side-network parameter count actually used by the estimators.
  double side_params() const;
};

std::optional<ModelSpec> model_preset(std::string_view name);  // "opt350m", "opt1.3b"

enum class MemoryMode { full_ft, side_local, mobillm, inference };

std::string_view to_string(MemoryMode mode);
std::optional<MemoryMode> parse_memory_mode(std::string_view text);

struct CostReport {
  double weights_bytes = 0;
  double activation_bytes = 0;
  double optimizer_bytes = 0;
  double total_bytes = 0;
  double payload_bytes_per_iter = 0;
  double est_iter_time_s = 0;
};

nlohmann::json to_json(const CostReport& report);

// Bytes resident on the device during one training iteration.
CostReport device_memory_estimate(const ModelSpec& spec, MemoryMode mode);

struct PayloadBreakdown {
  double codes = 0;       // tap code bytes; exactly linear in B, S, H and gamma
  double labels = 0;      // 4 bytes per sample
  double tap_headers = 0; // per-tap metadata and scale
  double envelope = 0;    // framing and batch header, constant
  double total() const { return codes + labels + tap_headers + envelope; }
};

PayloadBreakdown payload_breakdown(const ModelSpec& spec, QuantScheme scheme);

// One ActBatch frame on the wire for this spec.
double payload_per_iteration(const ModelSpec& spec, QuantScheme scheme);

// Pipelined steady state: the slowest of device forward, uplink and server.
// Throws ConfigError unless rate_bps > 0.
double iteration_time_estimate(double t_fwd_device_s, double payload_bytes, double rate_bps,
                               double t_server_s);

}  // namespace mobillm
