#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mobillm/device.hpp"
#include "mobillm/session.hpp"
#include "mobillm/train.hpp"

namespace mobillm {

struct ServerConfig {
  std::string listen = ":7070";
  std::uint32_t bottleneck = 16;
  Activation activation = Activation::gelu;
  double init_std = 0.02;
  std::uint64_t seed = 0;
  AdamHyper adam;
  LossKind loss = LossKind::cross_entropy;
  std::string checkpoint_path;  // written on Bye when set
  std::string metrics_path;     // JSONL, one row per iteration, when set
  std::uint32_t queue_depth = 4;
  AcceptPolicy policy;
  // Unsolicited MetricsSnapshot every N iterations (0: never). Lock-step
  // sessions get one per batch regardless.
  std::uint32_t snapshot_every = 0;
  Millis handshake_timeout = kDefaultHandshakeTimeout;
  Millis idle_timeout{300'000};
};

struct ServerReport {
  wire::Hello hello;
  std::uint64_t iterations = 0;
  std::uint64_t bytes_received = 0;
  std::uint64_t act_batch_bytes = 0;
  std::uint64_t protocol_errors = 0;
  std::uint64_t checkpoints_served = 0;
  bool clean_bye = false;
  std::string reset_reason;  // set when a malformed stream ended the session
  std::vector<IterationMetrics> metrics;
  std::optional<SideParams<float>> final_params;
};

// Side-network shape implied by a device's Hello and the server knobs.
SideConfig side_config_for(const ServerConfig& config, const wire::Hello& hello);

// One session over an established transport. A receive worker decodes and
// enqueues; the calling thread is the single training consumer.
ServerReport run_server_session(const ServerConfig& config, Transport& transport,
                                std::uint64_t session_id = 1);

// Listens on config.listen, serves exactly one session, then returns. When
// `bound_port` is given it receives the port once listening.
ServerReport run_server(const ServerConfig& config,
                        std::function<void(std::uint16_t)> bound_port = {});

struct LocalReport {
  DeviceReport device;
  ServerReport server;
};

// Device and server pipelines in one process with an in-memory hand-off
// and no framing: batches go straight from the compute worker into the
// trainer. With the same seeds the results match a split run exactly.
LocalReport local_mode(const DeviceConfig& device, const ServerConfig& server);

// Device and server in two threads over an in-process byte stream, the full
// protocol included. `rate_bps` > 0 throttles the device's uplink;
// `transcript` records the device's view of the connection.
struct SplitOptions {
  double rate_bps = 0.0;
  std::shared_ptr<Transcript> transcript;
};
LocalReport split_loopback(const DeviceConfig& device, const ServerConfig& server,
                           const SplitOptions& options = {});

}  // namespace mobillm
