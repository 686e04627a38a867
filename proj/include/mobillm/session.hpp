#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mobillm/transport.hpp"
#include "mobillm/wire.hpp"

namespace mobillm {

// Message-level view of a Transport. send() may be called from several
// threads; receive() must have a single caller.
class MessageChannel {
 public:
  explicit MessageChannel(Transport& transport) : transport_(transport) {}

  // Returns the number of bytes written.
  std::size_t send(const wire::Message& msg);
  // std::nullopt once the peer closed the stream cleanly.
  std::optional<wire::Message> receive(Millis timeout = kNoTimeout);
  void close() { transport_.close(); }

  std::uint64_t bytes_sent() const;
  std::uint64_t bytes_received() const noexcept { return bytes_received_; }
  std::size_t last_frame_bytes() const noexcept { return decoder_.last_frame_bytes(); }

 private:
  Transport& transport_;
  wire::StreamDecoder decoder_;
  mutable std::mutex send_mutex_;
  std::uint64_t bytes_sent_ = 0;
  std::uint64_t bytes_received_ = 0;
  std::vector<std::uint8_t> read_buffer_ = std::vector<std::uint8_t>(64 * 1024);
};

inline constexpr Millis kDefaultHandshakeTimeout{10'000};

// Device side: send Hello, wait for SessionAck. A rejection throws
// HandshakeError carrying the reason.
wire::SessionAck device_handshake(MessageChannel& channel, const wire::Hello& hello,
                                  Millis timeout = kDefaultHandshakeTimeout);

struct AcceptPolicy {
  std::optional<std::uint64_t> expected_digest;
  std::optional<std::uint16_t> expected_gamma;
  // Extra check run last; a non-empty result rejects with invalid_config.
  std::function<std::string(const wire::Hello&)> validate;
};

// Checks a Hello against the policy; accepted when the status is `accepted`.
wire::SessionAck evaluate_hello(const wire::Hello& hello, const AcceptPolicy& policy,
                                std::uint64_t session_id);

// Server side: wait for Hello, reply with SessionAck. On rejection the
// negative ack is still sent before HandshakeError is thrown.
wire::Hello server_handshake(MessageChannel& channel, const AcceptPolicy& policy,
                             std::uint64_t session_id, Millis timeout = kDefaultHandshakeTimeout);

struct TranscriptReport {
  std::vector<std::string> violations;
  std::map<wire::MsgType, std::size_t> device_to_server;
  std::map<wire::MsgType, std::size_t> server_to_device;

  bool ok() const noexcept { return violations.empty(); }
};

// Verifies the one-way contract of a recorded session: the device opens with
// a single Hello and then sends only ActBatch, CheckpointRequest and Bye; the
// server answers with one SessionAck and then sends only MetricsSnapshot and
// CheckpointData, never more CheckpointData than requested. Every ActBatch
// carries the announced tap count with strictly increasing batch ids, and no
// token row (as little-endian u32s) appears in either direction.
TranscriptReport check_transcript(std::span<const std::uint8_t> device_to_server,
                                  std::span<const std::uint8_t> server_to_device,
                                  std::span<const std::vector<std::uint32_t>> token_rows = {});

}  // namespace mobillm
