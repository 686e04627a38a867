#include "mobillm/session.hpp"

#include <algorithm>

#include "mobillm/bytes.hpp"

namespace mobillm {

std::size_t MessageChannel::send(const wire::Message& msg) {
  const auto frame = wire::encode(msg);
  std::lock_guard lock(send_mutex_);
  transport_.write(frame);
  bytes_sent_ += frame.size();
  return frame.size();
}

std::uint64_t MessageChannel::bytes_sent() const {
  std::lock_guard lock(send_mutex_);
  return bytes_sent_;
}

std::optional<wire::Message> MessageChannel::receive(Millis timeout) {
  const auto deadline = timeout == kNoTimeout ? std::chrono::steady_clock::time_point::max()
                                              : std::chrono::steady_clock::now() + timeout;
  while (true) {
    if (auto msg = decoder_.next()) return msg;
    Millis remaining = kNoTimeout;
    if (timeout != kNoTimeout) {
      remaining = std::chrono::duration_cast<Millis>(deadline - std::chrono::steady_clock::now());
      if (remaining.count() <= 0) throw TimeoutError("receive timed out");
    }
    const std::size_t n = transport_.read_some(read_buffer_, remaining);
    if (n == 0) {
      if (decoder_.buffered() != 0) throw FrameError("stream ended inside a frame");
      return std::nullopt;
    }
    bytes_received_ += n;
    decoder_.feed(std::span<const std::uint8_t>(read_buffer_.data(), n));
  }
}

wire::SessionAck device_handshake(MessageChannel& channel, const wire::Hello& hello,
                                  Millis timeout) {
  channel.send(hello);
  auto reply = channel.receive(timeout);
  if (!reply) throw HandshakeError("server closed the connection during the handshake");
  const auto* ack = std::get_if<wire::SessionAck>(&*reply);
  if (!ack) {
    throw HandshakeError("expected SessionAck, got " + std::string(wire::to_string(wire::type_of(*reply))));
  }
  if (ack->status != wire::AckStatus::accepted) {
    throw HandshakeError("server rejected session (" + std::string(wire::to_string(ack->status)) +
                         "): " + ack->reason);
  }
  return *ack;
}

wire::SessionAck evaluate_hello(const wire::Hello& hello, const AcceptPolicy& policy,
                                std::uint64_t session_id) {
  using wire::AckStatus;
  wire::SessionAck ack;
  ack.session_id = session_id;
  auto reject = [&](AckStatus status, std::string reason) {
    ack.status = status;
    ack.reason = std::move(reason);
    return ack;
  };
  if (hello.protocol_version != wire::kProtocolVersion) {
    return reject(AckStatus::version_mismatch,
                  "protocol version " + std::to_string(hello.protocol_version) + ", server speaks " +
                      std::to_string(wire::kProtocolVersion));
  }
  if (policy.expected_digest && *policy.expected_digest != hello.config_digest) {
    return reject(AckStatus::digest_mismatch, "backbone config digest differs");
  }
  if (policy.expected_gamma && *policy.expected_gamma != hello.gamma) {
    return reject(AckStatus::gamma_mismatch, "expected " + std::to_string(*policy.expected_gamma) +
                                                 " taps, device announced " +
                                                 std::to_string(hello.gamma));
  }
  const std::size_t min_gamma = hello.tap_embedding ? 2 : 1;
  if (hello.hidden == 0 || hello.classes == 0 || hello.gamma < min_gamma) {
    return reject(AckStatus::invalid_config, "hidden, classes and block taps must be positive");
  }
  if (policy.validate) {
    if (std::string problem = policy.validate(hello); !problem.empty()) {
      return reject(AckStatus::invalid_config, std::move(problem));
    }
  }
  ack.status = AckStatus::accepted;
  return ack;
}

wire::Hello server_handshake(MessageChannel& channel, const AcceptPolicy& policy,
                             std::uint64_t session_id, Millis timeout) {
  auto msg = channel.receive(timeout);
  if (!msg) throw HandshakeError("device closed the connection before Hello");
  const auto* hello = std::get_if<wire::Hello>(&*msg);
  if (!hello) {
    throw HandshakeError("expected Hello, got " + std::string(wire::to_string(wire::type_of(*msg))));
  }
  const wire::SessionAck ack = evaluate_hello(*hello, policy, session_id);
  channel.send(ack);
  if (ack.status != wire::AckStatus::accepted) {
    throw HandshakeError("rejected session (" + std::string(wire::to_string(ack.status)) +
                         "): " + ack.reason);
  }
  return *hello;
}

namespace {

std::vector<wire::Message> decode_all(std::span<const std::uint8_t> bytes,
                                      std::vector<std::string>& violations, const char* dir) {
  wire::StreamDecoder d;
  d.feed(bytes);
  std::vector<wire::Message> out;
  try {
    while (auto m = d.next()) out.push_back(std::move(*m));
    if (d.buffered() != 0) violations.push_back(std::string(dir) + ": trailing partial frame");
  } catch (const Error& e) {
    violations.push_back(std::string(dir) + ": undecodable stream: " + e.what());
  }
  return out;
}

bool contains(std::span<const std::uint8_t> haystack, std::span<const std::uint8_t> needle) {
  if (needle.empty()) return false;
  return std::search(haystack.begin(), haystack.end(), needle.begin(), needle.end()) != haystack.end();
}

}  // namespace

TranscriptReport check_transcript(std::span<const std::uint8_t> device_to_server,
                                  std::span<const std::uint8_t> server_to_device,
                                  std::span<const std::vector<std::uint32_t>> token_rows) {
  using wire::MsgType;
  TranscriptReport report;
  const auto up = decode_all(device_to_server, report.violations, "device->server");
  const auto down = decode_all(server_to_device, report.violations, "server->device");

  if (!up.empty() && wire::type_of(up.front()) != MsgType::hello) {
    report.violations.push_back("device did not open with Hello");
  }
  if (!down.empty() && wire::type_of(down.front()) != MsgType::session_ack) {
    report.violations.push_back("server did not open with SessionAck");
  }

  std::optional<std::uint16_t> gamma;
  std::optional<std::uint64_t> last_batch;
  for (const auto& m : up) {
    const MsgType t = wire::type_of(m);
    ++report.device_to_server[t];
    switch (t) {
      case MsgType::hello:
        if (gamma) report.violations.push_back("second Hello in one session");
        gamma = std::get<wire::Hello>(m).gamma;
        break;
      case MsgType::act_batch: {
        const auto& batch = std::get<wire::ActBatch>(m);
        if (gamma && batch.taps.size() != *gamma) {
          report.violations.push_back("ActBatch tap count differs from Hello gamma");
        }
        if (last_batch && batch.batch_id <= *last_batch) {
          report.violations.push_back("batch ids not strictly increasing");
        }
        last_batch = batch.batch_id;
        break;
      }
      case MsgType::checkpoint_request:
      case MsgType::bye:
        break;
      default:
        report.violations.push_back("device sent " + std::string(wire::to_string(t)));
    }
  }
  for (const auto& m : down) {
    const MsgType t = wire::type_of(m);
    ++report.server_to_device[t];
    if (t != MsgType::session_ack && t != MsgType::metrics_snapshot && t != MsgType::checkpoint_data) {
      report.violations.push_back("server sent " + std::string(wire::to_string(t)));
    }
  }
  auto count = [](const std::map<MsgType, std::size_t>& m, MsgType t) {
    const auto it = m.find(t);
    return it == m.end() ? std::size_t{0} : it->second;
  };
  if (count(report.server_to_device, MsgType::session_ack) > 1) {
    report.violations.push_back("more than one SessionAck");
  }
  if (count(report.server_to_device, MsgType::checkpoint_data) >
      count(report.device_to_server, MsgType::checkpoint_request)) {
    report.violations.push_back("CheckpointData without a matching request");
  }
  for (const auto& row : token_rows) {
    ByteWriter w;
    for (std::uint32_t id : row) w.u32(id);
    if (contains(device_to_server, w.buffer()) || contains(server_to_device, w.buffer())) {
      report.violations.push_back("raw token row found on the wire");
      break;
    }
  }
  return report;
}

}  // namespace mobillm
