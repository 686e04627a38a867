#include "mobillm/device.hpp"

#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "mobillm/bounded_queue.hpp"
#include "mobillm/rng.hpp"

namespace mobillm {

namespace {

using Clock = std::chrono::steady_clock;

double ms_between(Clock::time_point a, Clock::time_point b) {
  return std::chrono::duration<double, std::milli>(b - a).count();
}

struct QueuedBatch {
  ActivationBatch batch;
  std::size_t bytes = 0;
  DeviceIterationLog log;
};

std::size_t queued_bytes(const ActivationBatch& b) {
  return wire::act_batch_frame_bytes(b.labels.size(), b.taps);
}

void write_log(const std::string& path, const std::vector<DeviceIterationLog>& log) {
  if (path.empty()) return;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write device log " + path);
  for (const auto& l : log) {
    nlohmann::json j = {{"batch_id", l.batch_id},     {"t_fwd_ms", l.t_fwd_ms},
                        {"t_quant_ms", l.t_quant_ms}, {"t_send_ms", l.t_send_ms},
                        {"t_blocked_ms", l.t_blocked_ms}, {"queue_depth", l.queue_depth},
                        {"bytes", l.frame_bytes}};
    out << j.dump() << "\n";
  }
}

wire::MetricsSnapshot await_snapshot(MessageChannel& channel, Millis timeout) {
  auto msg = channel.receive(timeout);
  if (!msg) throw TransportError("server closed the connection");
  if (auto* s = std::get_if<wire::MetricsSnapshot>(&*msg)) return *s;
  throw ProtocolError("expected MetricsSnapshot, got " +
                      std::string(wire::to_string(wire::type_of(*msg))));
}

}  // namespace

std::uint64_t DeviceConfig::mix_seed_for_task(std::uint64_t seed) { return mix_seed(seed, 0x7A5C); }

BackboneWeights device_backbone(const DeviceConfig& config) {
  if (!config.weights_path.empty()) return load_weights(config.weights_path);
  return init_backbone(config.backbone, config.backbone_seed());
}

std::unique_ptr<Dataset> device_dataset(const DeviceConfig& config) {
  return make_dataset(config.task, config.backbone.vocab_size, config.seq, config.batch,
                      config.task_seed(), config.samples);
}

ActivationBatch make_act_batch(const BackboneWeights& backbone, const Batch& batch,
                               QuantScheme scheme, std::uint64_t batch_id) {
  const TapSet taps = forward_collect(backbone, batch.tokens);
  ActivationBatch out;
  out.batch_id = batch_id;
  out.labels = batch.labels;
  for (const auto& tap : taps.taps) {
    out.block_indices.push_back(static_cast<std::uint16_t>(tap.block_index));
    out.taps.push_back(quantize(tap.activation, scheme));
  }
  return out;
}

wire::Hello make_hello(const BackboneConfig& backbone, QuantScheme scheme, std::uint16_t classes,
                       bool lockstep) {
  wire::Hello h;
  h.config_digest = config_digest(backbone);
  h.hidden = backbone.hidden;
  h.gamma = static_cast<std::uint16_t>(backbone.tap_count());
  h.tap_embedding = backbone.tap_embedding;
  h.scheme = scheme;
  h.classes = classes;
  h.lockstep = lockstep;
  return h;
}

std::uint64_t planned_iterations(const DeviceConfig& config, const Dataset& dataset) {
  const std::uint64_t per_epoch = std::max<std::uint64_t>(1, dataset.samples() / config.batch);
  const std::uint64_t total = per_epoch * config.epochs;
  return config.max_iterations ? std::min<std::uint64_t>(config.max_iterations, total) : total;
}

double evaluate_accuracy(const BackboneWeights& backbone, const SideParams<float>& side,
                         const Dataset& dataset, QuantScheme scheme, std::uint64_t batches) {
  if (batches == 0) batches = std::max<std::uint64_t>(1, dataset.samples() / dataset.batch_size());
  std::uint64_t correct = 0, total = 0;
  for (std::uint64_t i = 0; i < batches; ++i) {
    const Batch batch = dataset.batch(i);
    const TensorF logits = combined_infer(backbone, side, batch.tokens, scheme);
    correct += static_cast<std::uint64_t>(std::llround(accuracy(logits, batch.labels) *
                                                       static_cast<double>(batch.labels.size())));
    total += batch.labels.size();
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

SideParams<float> fetch_checkpoint(MessageChannel& channel, Millis timeout,
                                   std::vector<wire::MetricsSnapshot>* snapshots) {
  channel.send(wire::CheckpointRequest{});
  while (true) {
    auto msg = channel.receive(timeout);
    if (!msg) throw TransportError("server closed the connection before CheckpointData");
    if (auto* data = std::get_if<wire::CheckpointData>(&*msg)) return decode_checkpoint(data->bytes);
    if (auto* s = std::get_if<wire::MetricsSnapshot>(&*msg)) {
      if (snapshots) snapshots->push_back(*s);
      continue;
    }
    throw ProtocolError("unexpected " + std::string(wire::to_string(wire::type_of(*msg))) +
                        " while waiting for CheckpointData");
  }
}

DeviceReport run_device(const DeviceConfig& config, Transport& transport) {
  if (config.queue_depth == 0) throw ConfigError("device: queue depth must be at least 1");
  if (config.batch == 0 || config.seq == 0) throw ConfigError("device: batch and seq must be positive");
  const BackboneWeights backbone = device_backbone(config);
  const auto dataset = device_dataset(config);
  if (dataset->seq_len() > backbone.config.max_seq) {
    throw ConfigError("device: sequence length " + std::to_string(dataset->seq_len()) +
                      " exceeds the backbone's max_seq " + std::to_string(backbone.config.max_seq));
  }
  const std::uint64_t iterations = planned_iterations(config, *dataset);

  MessageChannel channel(transport);
  try {
    device_handshake(channel, make_hello(backbone.config, config.scheme, config.classes, !config.pipelined),
                     config.handshake_timeout);
  } catch (const HandshakeError& e) {
    throw ConfigError(e.what());
  }

  DeviceReport report;
  report.log.resize(iterations);
  const auto started = Clock::now();
  auto finished = started;

  if (config.pipelined) {
    BoundedQueue<QueuedBatch> queue(config.queue_depth);
    std::mutex accounting_mutex;
    std::exception_ptr compute_error, send_error;

    std::thread compute([&] {
      try {
        for (std::uint64_t i = 0; i < iterations; ++i) {
          QueuedBatch item;
          item.log.batch_id = i;
          const auto t0 = Clock::now();
          const Batch batch = dataset->batch(i);
          const TapSet taps = forward_collect(backbone, batch.tokens);
          const auto t1 = Clock::now();
          item.batch.batch_id = i;
          item.batch.labels = batch.labels;
          for (const auto& tap : taps.taps) {
            item.batch.block_indices.push_back(static_cast<std::uint16_t>(tap.block_index));
            item.batch.taps.push_back(quantize(tap.activation, config.scheme));
          }
          const auto t2 = Clock::now();
          item.bytes = queued_bytes(item.batch);
          item.log.t_fwd_ms = ms_between(t0, t1);
          item.log.t_quant_ms = ms_between(t1, t2);
          item.log.queue_depth = queue.size();
          const std::size_t bytes = item.bytes;
          {
            std::lock_guard lock(accounting_mutex);
            report.max_batch_bytes = std::max(report.max_batch_bytes, bytes);
          }
          const auto t3 = Clock::now();
          if (!queue.push(std::move(item), bytes)) break;
          const auto t4 = Clock::now();
          std::lock_guard lock(accounting_mutex);
          report.log[i].t_blocked_ms = ms_between(t3, t4);
        }
      } catch (...) {
        compute_error = std::current_exception();
      }
      queue.close();
    });

    std::thread sender([&] {
      try {
        while (auto item = queue.pop()) {
          const auto t0 = Clock::now();
          const std::size_t sent = channel.send(item->batch);
          const auto t1 = Clock::now();
          std::lock_guard lock(accounting_mutex);
          DeviceIterationLog& log = report.log[item->batch.batch_id];
          const double blocked = log.t_blocked_ms;
          log = item->log;
          log.t_blocked_ms = blocked;
          log.t_send_ms = ms_between(t0, t1);
          log.frame_bytes = sent;
          report.act_batch_bytes += sent;
          ++report.iterations;
          finished = t1;
        }
      } catch (...) {
        send_error = std::current_exception();
        queue.close();
      }
    });

    compute.join();
    sender.join();
    report.queue_high_water = queue.high_water();
    report.max_queued_bytes = queue.max_weight();
    if (send_error) std::rethrow_exception(send_error);
    if (compute_error) std::rethrow_exception(compute_error);
  } else {
    for (std::uint64_t i = 0; i < iterations; ++i) {
      DeviceIterationLog& log = report.log[i];
      log.batch_id = i;
      const auto t0 = Clock::now();
      const Batch batch = dataset->batch(i);
      const TapSet taps = forward_collect(backbone, batch.tokens);
      const auto t1 = Clock::now();
      ActivationBatch act;
      act.batch_id = i;
      act.labels = batch.labels;
      for (const auto& tap : taps.taps) {
        act.block_indices.push_back(static_cast<std::uint16_t>(tap.block_index));
        act.taps.push_back(quantize(tap.activation, config.scheme));
      }
      const auto t2 = Clock::now();
      const std::size_t bytes = queued_bytes(act);
      report.max_batch_bytes = std::max(report.max_batch_bytes, bytes);
      report.max_queued_bytes = std::max(report.max_queued_bytes, bytes);
      const std::size_t sent = channel.send(act);
      report.snapshots.push_back(await_snapshot(channel, config.reply_timeout));
      const auto t3 = Clock::now();
      log.t_fwd_ms = ms_between(t0, t1);
      log.t_quant_ms = ms_between(t1, t2);
      log.t_send_ms = ms_between(t2, t3);
      log.frame_bytes = sent;
      report.act_batch_bytes += sent;
      ++report.iterations;
      finished = t3;
    }
  }
  report.wall_s = std::chrono::duration<double>(finished - started).count();

  if (config.fetch_checkpoint) {
    report.checkpoint = fetch_checkpoint(channel, config.reply_timeout, &report.snapshots);
  }
  channel.send(wire::Bye{});
  channel.close();
  // Wait for the server to finish its side of the session, keeping any
  // trailing snapshots.
  try {
    while (auto msg = channel.receive(config.reply_timeout)) {
      if (auto* s = std::get_if<wire::MetricsSnapshot>(&*msg)) report.snapshots.push_back(*s);
    }
  } catch (const TimeoutError&) {
  } catch (const TransportError&) {
  }
  report.bytes_sent = channel.bytes_sent();
  write_log(config.log_path, report.log);
  return report;
}

}  // namespace mobillm
