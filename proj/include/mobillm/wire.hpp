#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "mobillm/quant.hpp"

namespace mobillm::wire {

// Frame layout, all integers little-endian:
//   "MBLM" | u16 version | u8 msg_type | u8 flags | u32 payload_len |
//   payload | u32 crc32(payload)
inline constexpr std::uint16_t kFrameVersion = 1;
inline constexpr std::size_t kFrameHeaderBytes = 12;
inline constexpr std::size_t kFrameOverheadBytes = kFrameHeaderBytes + 4;
inline constexpr std::uint32_t kMaxPayloadBytes = 0x80000000u;  // 2^31
// Unknown message types with this flag are skipped instead of fatal.
inline constexpr std::uint8_t kFlagOptional = 0x01;

// Session-level protocol version carried inside Hello.
inline constexpr std::uint16_t kProtocolVersion = 1;

enum class MsgType : std::uint8_t {
  hello = 1,
  session_ack = 2,
  act_batch = 3,
  metrics_snapshot = 4,
  checkpoint_request = 5,
  checkpoint_data = 6,
  bye = 7,
};

std::string_view to_string(MsgType type);

struct Hello {
  std::uint16_t protocol_version = kProtocolVersion;
  std::uint64_t config_digest = 0;
  std::uint32_t hidden = 0;
  std::uint16_t gamma = 0;          // taps per ActBatch
  bool tap_embedding = false;       // first tap is the embedding output
  QuantScheme scheme = QuantScheme::none_fp16;
  std::uint16_t classes = 2;
  // Lock-step mode: the server answers every ActBatch with a MetricsSnapshot
  // and the device waits for it before computing the next batch.
  bool lockstep = false;

  bool operator==(const Hello&) const = default;
};

enum class AckStatus : std::uint8_t {
  accepted = 0,
  version_mismatch = 1,
  digest_mismatch = 2,
  gamma_mismatch = 3,
  invalid_config = 4,
};

std::string_view to_string(AckStatus status);

struct SessionAck {
  std::uint64_t session_id = 0;
  AckStatus status = AckStatus::accepted;
  std::string reason;

  bool operator==(const SessionAck&) const = default;
};

struct MetricsSnapshot {
  std::uint64_t iterations = 0;
  std::uint64_t last_batch_id = 0;
  float last_loss = 0.0f;
  float last_accuracy = 0.0f;

  bool operator==(const MetricsSnapshot&) const = default;
};

struct CheckpointRequest {
  bool operator==(const CheckpointRequest&) const = default;
};

struct CheckpointData {
  std::vector<std::uint8_t> bytes;  // side-network checkpoint encoding

  bool operator==(const CheckpointData&) const = default;
};

struct Bye {
  bool operator==(const Bye&) const = default;
};

using ActBatch = ActivationBatch;

using Message = std::variant<Hello, SessionAck, ActBatch, MetricsSnapshot, CheckpointRequest,
                             CheckpointData, Bye>;

MsgType type_of(const Message& msg);

// ActBatch payload: u64 batch_id | u32 label_count | labels u32 |
// u16 tap_count | per tap: u16 block_idx, u8 scheme, 3 x u32 shape,
// f32 scale, u32 code_len, codes.
std::vector<std::uint8_t> encode(const Message& msg, std::uint8_t flags = 0);

// Frame bytes an ActBatch with these dimensions occupies.
std::size_t act_batch_frame_bytes(std::size_t labels, std::span<const QuantizedActivation> taps);

std::uint32_t crc32(std::span<const std::uint8_t> bytes);

struct NeedMore {};
struct Decoded {
  Message message;
  std::size_t consumed = 0;
};
struct Skipped {
  std::uint8_t msg_type = 0;
  std::size_t consumed = 0;
};
using DecodeResult = std::variant<NeedMore, Decoded, Skipped>;

// Parses at most one frame from the front of `bytes`. Bad magic throws
// DesyncError, a version or unknown mandatory type ProtocolError, a CRC or
// payload mismatch FrameError, an oversized length SizeError.
DecodeResult decode(std::span<const std::uint8_t> bytes);

// Incremental decoder over an arbitrarily fragmented byte stream.
class StreamDecoder {
 public:
  void feed(std::span<const std::uint8_t> bytes);
  std::optional<Message> next();

  std::size_t buffered() const noexcept { return buffer_.size() - start_; }
  std::size_t skipped_frames() const noexcept { return skipped_; }
  // Frame size of the message most recently returned by next().
  std::size_t last_frame_bytes() const noexcept { return last_frame_; }

 private:
  std::vector<std::uint8_t> buffer_;
  std::size_t start_ = 0;
  std::size_t skipped_ = 0;
  std::size_t last_frame_ = 0;
};

}  // namespace mobillm::wire
