#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mobillm/backbone.hpp"
#include "mobillm/dataset.hpp"
#include "mobillm/quant.hpp"
#include "mobillm/session.hpp"
#include "mobillm/side_network.hpp"

namespace mobillm {

struct DeviceConfig {
  BackboneConfig backbone;
  std::string weights_path;  // empty: initialize the backbone from `seed`
  std::uint64_t seed = 0;
  QuantScheme scheme = QuantScheme::nf4;
  std::uint32_t batch = 16;
  std::uint32_t seq = 256;
  std::uint32_t epochs = 20;
  std::uint32_t samples = 1024;        // synthetic samples per epoch
  std::uint32_t max_iterations = 0;    // 0: epochs * samples / batch
  std::uint32_t queue_depth = 4;
  std::string task = "synth";
  std::string log_path;                // device JSONL log, empty to skip
  std::uint16_t classes = 2;
  // false: the conventional interleaved rule. One thread computes and sends,
  // then waits for the server's per-batch MetricsSnapshot.
  bool pipelined = true;
  bool fetch_checkpoint = false;       // request the side network before Bye
  Millis handshake_timeout = kDefaultHandshakeTimeout;
  Millis reply_timeout{120'000};

  std::uint64_t backbone_seed() const { return seed; }
  std::uint64_t task_seed() const { return mix_seed_for_task(seed); }
  static std::uint64_t mix_seed_for_task(std::uint64_t seed);
};

struct DeviceIterationLog {
  std::uint64_t batch_id = 0;
  double t_fwd_ms = 0.0;
  double t_quant_ms = 0.0;
  double t_send_ms = 0.0;
  double t_blocked_ms = 0.0;  // compute worker waiting on a full queue
  std::size_t queue_depth = 0;
  std::size_t frame_bytes = 0;
};

struct DeviceReport {
  std::uint64_t iterations = 0;
  std::uint64_t bytes_sent = 0;
  std::uint64_t act_batch_bytes = 0;  // ActBatch frames only
  double wall_s = 0.0;                // first forward to last ActBatch sent
  std::size_t max_queued_bytes = 0;
  std::size_t max_batch_bytes = 0;    // largest single queued payload
  std::size_t queue_high_water = 0;
  std::vector<DeviceIterationLog> log;
  std::optional<SideParams<float>> checkpoint;
  std::vector<wire::MetricsSnapshot> snapshots;
};

// Loads or initializes the backbone described by the config.
BackboneWeights device_backbone(const DeviceConfig& config);

std::unique_ptr<Dataset> device_dataset(const DeviceConfig& config);

// Quantized taps, labels and id for one batch; tokens never leave here.
ActivationBatch make_act_batch(const BackboneWeights& backbone, const Batch& batch,
                               QuantScheme scheme, std::uint64_t batch_id);

wire::Hello make_hello(const BackboneConfig& backbone, QuantScheme scheme, std::uint16_t classes,
                       bool lockstep);

std::uint64_t planned_iterations(const DeviceConfig& config, const Dataset& dataset);

// Handshake, then a compute worker (batch -> forward_collect -> quantize ->
// bounded queue) and a send worker (queue -> encode -> transmit). Ends with
// an optional checkpoint fetch and Bye.
DeviceReport run_device(const DeviceConfig& config, Transport& transport);

// Classification accuracy of combined_infer over the first `batches`
// batches of `dataset` (all of one epoch when 0).
double evaluate_accuracy(const BackboneWeights& backbone, const SideParams<float>& side,
                         const Dataset& dataset, QuantScheme scheme, std::uint64_t batches = 0);

// Sends CheckpointRequest and waits for CheckpointData, skipping snapshots.
SideParams<float> fetch_checkpoint(MessageChannel& channel, Millis timeout,
                                   std::vector<wire::MetricsSnapshot>* snapshots = nullptr);

}  // namespace mobillm
