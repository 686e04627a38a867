#include "mobillm/server.hpp"

#include <chrono>
#include <exception>
#include <fstream>
#include <iostream>
#include <thread>

#include "mobillm/bounded_queue.hpp"

namespace mobillm {

namespace {

using Clock = std::chrono::steady_clock;

struct Inbound {
  wire::Message message;
  std::size_t frame_bytes = 0;
};

class MetricsSink {
 public:
  explicit MetricsSink(const std::string& path) {
    if (path.empty()) return;
    out_.open(path, std::ios::trunc);
    if (!out_) throw IoError("cannot write metrics file " + path);
  }
  void write(const IterationMetrics& m) {
    if (!out_.is_open()) return;
    out_ << to_json(m).dump() << "\n";
    out_.flush();
  }

 private:
  std::ofstream out_;
};

wire::MetricsSnapshot snapshot_of(const Trainer& trainer) {
  wire::MetricsSnapshot s;
  s.iterations = trainer.iterations();
  if (!trainer.history().empty()) {
    const IterationMetrics& last = trainer.history().back();
    s.last_batch_id = last.batch_id;
    s.last_loss = static_cast<float>(last.loss);
    s.last_accuracy = static_cast<float>(last.accuracy);
  }
  return s;
}

AcceptPolicy policy_for(const ServerConfig& config) {
  AcceptPolicy policy = config.policy;
  auto outer = policy.validate;
  policy.validate = [config, outer](const wire::Hello& hello) -> std::string {
    if (outer) {
      if (std::string problem = outer(hello); !problem.empty()) return problem;
    }
    try {
      side_config_for(config, hello).validate();
    } catch (const ConfigError& e) {
      return e.what();
    }
    return {};
  };
  return policy;
}

}  // namespace

SideConfig side_config_for(const ServerConfig& config, const wire::Hello& hello) {
  SideConfig side;
  side.hidden = hello.hidden;
  side.bottleneck = config.bottleneck;
  side.adapters = hello.gamma - (hello.tap_embedding ? 1u : 0u);
  side.classes = config.loss == LossKind::mse ? 1u : hello.classes;
  side.activation = config.activation;
  side.init_std = config.init_std;
  return side;
}

ServerReport run_server_session(const ServerConfig& config, Transport& transport,
                                std::uint64_t session_id) {
  if (config.queue_depth == 0) throw ConfigError("server: queue depth must be at least 1");
  MessageChannel channel(transport);
  ServerReport report;
  report.hello = server_handshake(channel, policy_for(config), session_id, config.handshake_timeout);

  Trainer trainer({side_config_for(config, report.hello), config.seed, config.adam, config.loss});
  MetricsSink metrics(config.metrics_path);
  BoundedQueue<Inbound> queue(config.queue_depth);

  std::string reset_reason;
  std::thread receiver([&] {
    try {
      while (auto msg = channel.receive(config.idle_timeout)) {
        if (!queue.push({std::move(*msg), channel.last_frame_bytes()})) break;
      }
    } catch (const Error& e) {
      reset_reason = std::string(to_string(e.kind())) + ": " + e.what();
    }
    queue.close();
  });

  std::exception_ptr failure;
  try {
    while (auto in = queue.pop()) {
      if (auto* batch = std::get_if<wire::ActBatch>(&in->message)) {
        report.act_batch_bytes += in->frame_bytes;
        try {
          const IterationMetrics m = trainer.train_iteration(*batch, in->frame_bytes);
          metrics.write(m);
        } catch (const ProtocolError& e) {
          ++report.protocol_errors;
          std::cerr << "server: dropped batch " << batch->batch_id << ": " << e.what() << "\n";
        }
        const bool periodic =
            config.snapshot_every && trainer.iterations() % config.snapshot_every == 0;
        if (report.hello.lockstep || periodic) channel.send(snapshot_of(trainer));
      } else if (std::holds_alternative<wire::CheckpointRequest>(in->message)) {
        // The trainer only changes between pops, so this is an iteration
        // boundary.
        channel.send(wire::CheckpointData{encode_checkpoint(trainer.params())});
        ++report.checkpoints_served;
      } else if (std::holds_alternative<wire::Bye>(in->message)) {
        report.clean_bye = true;
        break;
      } else {
        ++report.protocol_errors;
        std::cerr << "server: ignored unexpected " << wire::to_string(wire::type_of(in->message))
                  << "\n";
      }
    }
  } catch (...) {
    failure = std::current_exception();
  }
  queue.close();
  if (report.clean_bye && !config.checkpoint_path.empty()) {
    try {
      save_checkpoint(config.checkpoint_path, trainer.params());
    } catch (...) {
      if (!failure) failure = std::current_exception();
    }
  }
  channel.close();
  receiver.join();
  if (failure) std::rethrow_exception(failure);

  report.reset_reason = reset_reason;
  if (!reset_reason.empty()) std::cerr << "server: session reset: " << reset_reason << "\n";
  report.iterations = trainer.iterations();
  report.bytes_received = channel.bytes_received();
  report.metrics = trainer.history();
  report.final_params = trainer.params();
  return report;
}

ServerReport run_server(const ServerConfig& config, std::function<void(std::uint16_t)> bound_port) {
  auto [host, port] = parse_endpoint(config.listen);
  if (!config.listen.empty() && config.listen.front() == ':') host = "0.0.0.0";
  TcpListener listener(port, host);
  if (bound_port) bound_port(listener.port());
  auto connection = listener.accept(config.idle_timeout);
  return run_server_session(config, *connection);
}

LocalReport local_mode(const DeviceConfig& device, const ServerConfig& server) {
  if (device.queue_depth == 0) throw ConfigError("device: queue depth must be at least 1");
  const BackboneWeights backbone = device_backbone(device);
  const auto dataset = device_dataset(device);
  if (dataset->seq_len() > backbone.config.max_seq) {
    throw ConfigError("device: sequence length exceeds the backbone's max_seq");
  }
  const std::uint64_t iterations = planned_iterations(device, *dataset);

  LocalReport report;
  report.server.hello = make_hello(backbone.config, device.scheme, device.classes, false);
  const AcceptPolicy policy = policy_for(server);
  const wire::SessionAck ack = evaluate_hello(report.server.hello, policy, 0);
  if (ack.status != wire::AckStatus::accepted) throw ConfigError(ack.reason);

  Trainer trainer({side_config_for(server, report.server.hello), server.seed, server.adam, server.loss});
  MetricsSink metrics(server.metrics_path);
  BoundedQueue<ActivationBatch> queue(device.queue_depth);
  report.device.log.resize(iterations);

  const auto started = Clock::now();
  std::exception_ptr compute_error;
  std::thread compute([&] {
    try {
      for (std::uint64_t i = 0; i < iterations; ++i) {
        const auto t0 = Clock::now();
        const Batch batch = dataset->batch(i);
        const TapSet taps = forward_collect(backbone, batch.tokens);
        const auto t1 = Clock::now();
        ActivationBatch act;
        act.batch_id = i;
        act.labels = batch.labels;
        for (const auto& tap : taps.taps) {
          act.block_indices.push_back(static_cast<std::uint16_t>(tap.block_index));
          act.taps.push_back(quantize(tap.activation, device.scheme));
        }
        const auto t2 = Clock::now();
        DeviceIterationLog& log = report.device.log[i];
        log.batch_id = i;
        log.t_fwd_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
        log.t_quant_ms = std::chrono::duration<double, std::milli>(t2 - t1).count();
        log.frame_bytes = wire::act_batch_frame_bytes(act.labels.size(), act.taps);
        log.queue_depth = queue.size();
        if (!queue.push(std::move(act), log.frame_bytes)) break;
      }
    } catch (...) {
      compute_error = std::current_exception();
    }
    queue.close();
  });

  std::exception_ptr train_error;
  try {
    while (auto batch = queue.pop()) {
      const std::size_t bytes = wire::act_batch_frame_bytes(batch->labels.size(), batch->taps);
      metrics.write(trainer.train_iteration(*batch, bytes));
      report.server.act_batch_bytes += bytes;
    }
  } catch (...) {
    train_error = std::current_exception();
    queue.close();
  }
  compute.join();
  if (compute_error) std::rethrow_exception(compute_error);
  if (train_error) std::rethrow_exception(train_error);

  report.device.wall_s = std::chrono::duration<double>(Clock::now() - started).count();
  report.device.iterations = trainer.iterations();
  report.device.act_batch_bytes = report.server.act_batch_bytes;
  report.device.max_queued_bytes = queue.max_weight();
  report.device.queue_high_water = queue.high_water();
  report.server.iterations = trainer.iterations();
  report.server.clean_bye = true;
  report.server.metrics = trainer.history();
  report.server.final_params = trainer.params();
  if (device.fetch_checkpoint) report.device.checkpoint = trainer.params();
  if (!server.checkpoint_path.empty()) save_checkpoint(server.checkpoint_path, trainer.params());
  if (!device.log_path.empty()) {
    std::ofstream out(device.log_path, std::ios::trunc);
    for (const auto& l : report.device.log) {
      out << nlohmann::json{{"batch_id", l.batch_id},     {"t_fwd_ms", l.t_fwd_ms},
                            {"t_quant_ms", l.t_quant_ms}, {"t_send_ms", l.t_send_ms},
                            {"t_blocked_ms", l.t_blocked_ms}, {"queue_depth", l.queue_depth},
                            {"bytes", l.frame_bytes}}
                 .dump()
          << "\n";
    }
  }
  return report;
}

LocalReport split_loopback(const DeviceConfig& device, const ServerConfig& server,
                           const SplitOptions& options) {
  auto [device_end, server_end] = make_loopback_pair();
  Transport* device_transport = device_end.get();
  std::unique_ptr<RateLimitedTransport> limited;
  std::unique_ptr<RecordingTransport> recording;
  if (options.rate_bps > 0) {
    limited = std::make_unique<RateLimitedTransport>(*device_transport, options.rate_bps);
    device_transport = limited.get();
  }
  if (options.transcript) {
    recording = std::make_unique<RecordingTransport>(*device_transport, options.transcript);
    device_transport = recording.get();
  }

  LocalReport report;
  std::exception_ptr server_error;
  std::thread server_thread([&] {
    try {
      report.server = run_server_session(server, *server_end);
    } catch (...) {
      server_error = std::current_exception();
      server_end->close();
    }
  });
  std::exception_ptr device_error;
  try {
    report.device = run_device(device, *device_transport);
  } catch (...) {
    device_error = std::current_exception();
    device_transport->close();
  }
  server_thread.join();
  if (device_error) std::rethrow_exception(device_error);
  if (server_error) std::rethrow_exception(server_error);
  return report;
}

}  // namespace mobillm
