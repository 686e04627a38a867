#include "mobillm/wire.hpp"

#include <iostream>

#include <zlib.h>

#include "mobillm/bytes.hpp"

namespace mobillm::wire {

std::string_view to_string(MsgType type) {
  switch (type) {
    case MsgType::hello: return "Hello";
    case MsgType::session_ack: return "SessionAck";
    case MsgType::act_batch: return "ActBatch";
    case MsgType::metrics_snapshot: return "MetricsSnapshot";
    case MsgType::checkpoint_request: return "CheckpointRequest";
    case MsgType::checkpoint_data: return "CheckpointData";
    case MsgType::bye: return "Bye";
  }
  return "unknown";
}

std::string_view to_string(AckStatus status) {
  switch (status) {
    case AckStatus::accepted: return "accepted";
    case AckStatus::version_mismatch: return "version_mismatch";
    case AckStatus::digest_mismatch: return "digest_mismatch";
    case AckStatus::gamma_mismatch: return "gamma_mismatch";
    case AckStatus::invalid_config: return "invalid_config";
  }
  return "unknown";
}

MsgType type_of(const Message& msg) {
  return static_cast<MsgType>(msg.index() + 1);
}

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - pos, 1u << 30));
    crc = ::crc32(crc, bytes.data() + pos, chunk);
    pos += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

namespace {

void encode_payload(ByteWriter& w, const Hello& m) {
  w.u16(m.protocol_version);
  w.u64(m.config_digest);
  w.u32(m.hidden);
  w.u16(m.gamma);
  w.u8(m.tap_embedding ? 1 : 0);
  w.u8(static_cast<std::uint8_t>(m.scheme));
  w.u16(m.classes);
  w.u8(m.lockstep ? 1 : 0);
}

void encode_payload(ByteWriter& w, const SessionAck& m) {
  w.u64(m.session_id);
  w.u8(static_cast<std::uint8_t>(m.status));
  w.u16(static_cast<std::uint16_t>(m.reason.size()));
  w.bytes({reinterpret_cast<const std::uint8_t*>(m.reason.data()), m.reason.size()});
}

void encode_payload(ByteWriter& w, const ActBatch& m) {
  if (m.block_indices.size() != m.taps.size()) {
    throw InputError("ActBatch: block index count differs from tap count");
  }
  w.u64(m.batch_id);
  w.u32(static_cast<std::uint32_t>(m.labels.size()));
  for (std::uint32_t l : m.labels) w.u32(l);
  w.u16(static_cast<std::uint16_t>(m.taps.size()));
  for (std::size_t i = 0; i < m.taps.size(); ++i) {
    const QuantizedActivation& q = m.taps[i];
    if (q.shape.size() != 3) throw InputError("ActBatch: taps must be rank 3");
    w.u16(m.block_indices[i]);
    w.u8(static_cast<std::uint8_t>(q.scheme));
    for (std::size_t d : q.shape) w.u32(static_cast<std::uint32_t>(d));
    w.f32(q.scale);
    w.u32(static_cast<std::uint32_t>(q.codes.size()));
    w.bytes(q.codes);
  }
}

void encode_payload(ByteWriter& w, const MetricsSnapshot& m) {
  w.u64(m.iterations);
  w.u64(m.last_batch_id);
  w.f32(m.last_loss);
  w.f32(m.last_accuracy);
}

void encode_payload(ByteWriter&, const CheckpointRequest&) {}

void encode_payload(ByteWriter& w, const CheckpointData& m) { w.bytes(m.bytes); }

void encode_payload(ByteWriter&, const Bye&) {}

Message decode_payload(MsgType type, std::span<const std::uint8_t> payload) {
  ByteReader r(payload);
  Message out;
  switch (type) {
    case MsgType::hello: {
      Hello m;
      m.protocol_version = r.u16();
      m.config_digest = r.u64();
      m.hidden = r.u32();
      m.gamma = r.u16();
      m.tap_embedding = r.u8() != 0;
      m.scheme = scheme_from_wire(r.u8());
      m.classes = r.u16();
      m.lockstep = r.u8() != 0;
      out = m;
      break;
    }
    case MsgType::session_ack: {
      SessionAck m;
      m.session_id = r.u64();
      const std::uint8_t status = r.u8();
      if (status > static_cast<std::uint8_t>(AckStatus::invalid_config)) {
        throw FrameError("SessionAck: unknown status " + std::to_string(status));
      }
      m.status = static_cast<AckStatus>(status);
      const std::uint16_t len = r.u16();
      auto text = r.bytes(len);
      m.reason.assign(text.begin(), text.end());
      out = m;
      break;
    }
    case MsgType::act_batch: {
      ActBatch m;
      m.batch_id = r.u64();
      const std::uint32_t label_count = r.u32();
      if (label_count > r.remaining() / 4) throw FrameError("ActBatch: label count overruns payload");
      m.labels.resize(label_count);
      for (auto& l : m.labels) l = r.u32();
      const std::uint16_t taps = r.u16();
      for (std::uint16_t t = 0; t < taps; ++t) {
        QuantizedActivation q;
        m.block_indices.push_back(r.u16());
        q.scheme = scheme_from_wire(r.u8());
        q.shape = {r.u32(), r.u32(), r.u32()};
        q.scale = r.f32();
        const std::uint32_t len = r.u32();
        if (len != code_bytes(shape_elements(q.shape), q.scheme)) {
          throw FrameError("ActBatch: code length inconsistent with tap shape");
        }
        auto codes = r.bytes(len);
        q.codes.assign(codes.begin(), codes.end());
        m.taps.push_back(std::move(q));
      }
      out = std::move(m);
      break;
    }
    case MsgType::metrics_snapshot: {
      MetricsSnapshot m;
      m.iterations = r.u64();
      m.last_batch_id = r.u64();
      m.last_loss = r.f32();
      m.last_accuracy = r.f32();
      out = m;
      break;
    }
    case MsgType::checkpoint_request:
      out = CheckpointRequest{};
      break;
    case MsgType::checkpoint_data: {
      CheckpointData m;
      auto b = r.bytes(r.remaining());
      m.bytes.assign(b.begin(), b.end());
      out = std::move(m);
      break;
    }
    case MsgType::bye:
      out = Bye{};
      break;
  }
  if (r.remaining() != 0) {
    throw FrameError(std::string(to_string(type)) + ": " + std::to_string(r.remaining()) +
                     " trailing payload bytes");
  }
  return out;
}

bool known_type(std::uint8_t t) {
  return t >= static_cast<std::uint8_t>(MsgType::hello) && t <= static_cast<std::uint8_t>(MsgType::bye);
}

}  // namespace

std::vector<std::uint8_t> encode(const Message& msg, std::uint8_t flags) {
  ByteWriter payload;
  std::visit([&](const auto& m) { encode_payload(payload, m); }, msg);
  if (payload.size() > kMaxPayloadBytes) {
    throw SizeError("frame payload of " + std::to_string(payload.size()) + " bytes exceeds 2^31");
  }
  ByteWriter w;
  w.buffer().reserve(payload.size() + kFrameOverheadBytes);
  w.tag("MBLM");
  w.u16(kFrameVersion);
  w.u8(static_cast<std::uint8_t>(type_of(msg)));
  w.u8(flags);
  w.u32(static_cast<std::uint32_t>(payload.size()));
  w.bytes(payload.buffer());
  w.u32(crc32(payload.buffer()));
  return w.take();
}

std::size_t act_batch_frame_bytes(std::size_t labels, std::span<const QuantizedActivation> taps) {
  std::size_t n = kFrameOverheadBytes + 8 + 4 + 4 * labels + 2;
  for (const auto& q : taps) n += payload_bytes(q.shape, q.scheme);
  return n;
}

DecodeResult decode(std::span<const std::uint8_t> bytes) {
  static constexpr std::uint8_t kMagic[4] = {'M', 'B', 'L', 'M'};
  for (std::size_t i = 0; i < std::min<std::size_t>(4, bytes.size()); ++i) {
    if (bytes[i] != kMagic[i]) throw DesyncError("frame: bad magic");
  }
  if (bytes.size() < kFrameHeaderBytes) return NeedMore{};
  ByteReader header(bytes.subspan(4, kFrameHeaderBytes - 4));
  const std::uint16_t version = header.u16();
  const std::uint8_t type = header.u8();
  const std::uint8_t flags = header.u8();
  const std::uint32_t len = header.u32();
  if (version != kFrameVersion) {
    throw ProtocolError("frame: unsupported version " + std::to_string(version));
  }
  if (len > kMaxPayloadBytes) throw SizeError("frame: payload length " + std::to_string(len) + " exceeds 2^31");
  const std::size_t total = kFrameOverheadBytes + len;
  if (bytes.size() < total) return NeedMore{};

  const auto payload = bytes.subspan(kFrameHeaderBytes, len);
  ByteReader trailer(bytes.subspan(kFrameHeaderBytes + len, 4));
  if (trailer.u32() != crc32(payload)) throw FrameError("frame: crc mismatch");

  if (!known_type(type)) {
    if (flags & kFlagOptional) return Skipped{type, total};
    throw ProtocolError("frame: unknown mandatory message type " + std::to_string(type));
  }
  try {
    return Decoded{decode_payload(static_cast<MsgType>(type), payload), total};
  } catch (const IoError& e) {
    throw FrameError(std::string("frame: truncated payload: ") + e.what());
  } catch (const FormatError& e) {
    throw FrameError(std::string("frame: ") + e.what());
  }
}

void StreamDecoder::feed(std::span<const std::uint8_t> bytes) {
  if (start_ > 0 && start_ >= buffer_.size() / 2) {
    buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(start_));
    start_ = 0;
  }
  buffer_.insert(buffer_.end(), bytes.begin(), bytes.end());
}

std::optional<Message> StreamDecoder::next() {
  while (true) {
    const std::span<const std::uint8_t> view(buffer_.data() + start_, buffer_.size() - start_);
    DecodeResult r = decode(view);
    if (std::holds_alternative<NeedMore>(r)) return std::nullopt;
    if (auto* s = std::get_if<Skipped>(&r)) {
      std::cerr << "mobillm: skipping optional frame of unknown type " << int(s->msg_type) << "\n";
      start_ += s->consumed;
      ++skipped_;
      continue;
    }
    auto& d = std::get<Decoded>(r);
    start_ += d.consumed;
    last_frame_ = d.consumed;
    return std::move(d.message);
  }
}

}  // namespace mobillm::wire
