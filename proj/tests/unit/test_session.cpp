#include <gtest/gtest.h>

#include <chrono>
#include <thread>

#include "mobillm/error.hpp"
#include "mobillm/session.hpp"
#include "mobillm/transport.hpp"

using namespace mobillm;
using namespace std::chrono_literals;

namespace {

wire::Hello good_hello() {
  wire::Hello h;
  h.config_digest = 77;
  h.hidden = 32;
  h.gamma = 5;
  h.tap_embedding = true;
  h.scheme = QuantScheme::nf4;
  return h;
}

AcceptPolicy strict_policy() {
  AcceptPolicy p;
  p.expected_digest = 77;
  p.expected_gamma = 5;
  return p;
}

std::vector<std::uint8_t> frames(std::initializer_list<wire::Message> msgs) {
  std::vector<std::uint8_t> out;
  for (const auto& m : msgs) {
    const auto f = wire::encode(m);
    out.insert(out.end(), f.begin(), f.end());
  }
  return out;
}

wire::ActBatch batch(std::uint64_t id, std::size_t taps) {
  wire::ActBatch b;
  b.batch_id = id;
  b.labels = {1};
  for (std::size_t i = 0; i < taps; ++i) {
    b.block_indices.push_back(static_cast<std::uint16_t>(i));
    b.taps.push_back(quantize(TensorF({1, 1, 2}, {0.5f, -1.0f}), QuantScheme::nf4));
  }
  return b;
}

}  // namespace

TEST(EvaluateHello, AcceptsMatchingConfig) {
  const auto ack = evaluate_hello(good_hello(), strict_policy(), 9);
  EXPECT_EQ(ack.status, wire::AckStatus::accepted);
  EXPECT_EQ(ack.session_id, 9u);
}

TEST(EvaluateHello, RejectionReasons) {
  auto h = good_hello();
  h.gamma = 4;
  EXPECT_EQ(evaluate_hello(h, strict_policy(), 1).status, wire::AckStatus::gamma_mismatch);
  h = good_hello();
  h.config_digest = 1;
  EXPECT_EQ(evaluate_hello(h, strict_policy(), 1).status, wire::AckStatus::digest_mismatch);
  h = good_hello();
  h.protocol_version = wire::kProtocolVersion + 1;
  EXPECT_EQ(evaluate_hello(h, strict_policy(), 1).status, wire::AckStatus::version_mismatch);
  h = good_hello();
  h.hidden = 0;
  EXPECT_EQ(evaluate_hello(h, AcceptPolicy{}, 1).status, wire::AckStatus::invalid_config);
  AcceptPolicy p;
  p.validate = [](const wire::Hello& hello) { return hello.classes > 1 ? std::string() : "one class"; };
  h = good_hello();
  h.classes = 1;
  const auto ack = evaluate_hello(h, p, 1);
  EXPECT_EQ(ack.status, wire::AckStatus::invalid_config);
  EXPECT_EQ(ack.reason, "one class");
}

TEST(Handshake, LoopbackAccept) {
  auto [a, b] = make_loopback_pair();
  MessageChannel device(*a), server(*b);
  wire::Hello seen;
  std::thread t([&] { seen = server_handshake(server, strict_policy(), 5); });
  const auto ack = device_handshake(device, good_hello());
  t.join();
  EXPECT_EQ(ack.session_id, 5u);
  EXPECT_EQ(seen, good_hello());
}

TEST(Handshake, GammaMismatchRejectedOnBothEnds) {
  auto [a, b] = make_loopback_pair();
  MessageChannel device(*a), server(*b);
  auto hello = good_hello();
  hello.gamma = 3;
  bool server_threw = false;
  std::thread t([&] {
    try {
      server_handshake(server, strict_policy(), 5);
    } catch (const HandshakeError&) {
      server_threw = true;
    }
  });
  try {
    device_handshake(device, hello);
    ADD_FAILURE() << "device handshake should fail";
  } catch (const HandshakeError& e) {
    EXPECT_NE(std::string(e.what()).find("gamma_mismatch"), std::string::npos) << e.what();
  }
  t.join();
  EXPECT_TRUE(server_threw);
}

TEST(Handshake, VersionSkewIsHandshakeError) {
  auto [a, b] = make_loopback_pair();
  MessageChannel device(*a), server(*b);
  auto hello = good_hello();
  hello.protocol_version = 9;
  std::thread t([&] { EXPECT_THROW(server_handshake(server, AcceptPolicy{}, 1), HandshakeError); });
  EXPECT_THROW(device_handshake(device, hello), HandshakeError);
  t.join();
}

TEST(Handshake, TimeoutWhenPeerSilent) {
  auto [a, b] = make_loopback_pair();
  MessageChannel device(*a), server(*b);
  EXPECT_THROW(server_handshake(server, AcceptPolicy{}, 1, 50ms), TimeoutError);
  EXPECT_THROW(device_handshake(device, good_hello(), 50ms), TimeoutError);
}

TEST(Channel, ReceiveReturnsNulloptAfterClose) {
  auto [a, b] = make_loopback_pair();
  MessageChannel x(*a), y(*b);
  const std::size_t n = x.send(wire::Bye{});
  x.close();
  EXPECT_EQ(n, 16u);
  EXPECT_EQ(x.bytes_sent(), 16u);
  auto m = y.receive(1000ms);
  ASSERT_TRUE(m.has_value());
  EXPECT_EQ(wire::type_of(*m), wire::MsgType::bye);
  EXPECT_FALSE(y.receive(1000ms).has_value());
  EXPECT_EQ(y.bytes_received(), 16u);
}

TEST(Transcript, CleanSessionPasses) {
  const auto up = frames({good_hello(), batch(0, 5), batch(1, 5), wire::CheckpointRequest{}, wire::Bye{}});
  const auto down = frames({wire::SessionAck{1, wire::AckStatus::accepted, ""}, wire::MetricsSnapshot{}, wire::CheckpointData{{1}}});
  const std::vector<std::vector<std::uint32_t>> rows = {{1000001, 1000002, 1000003}};
  const auto r = check_transcript(up, down, rows);
  EXPECT_TRUE(r.ok()) << (r.violations.empty() ? "" : r.violations.front());
  EXPECT_EQ(r.device_to_server.at(wire::MsgType::act_batch), 2u);
}

TEST(Transcript, ViolationsDetected) {
  const auto ok_down = frames({wire::SessionAck{1, wire::AckStatus::accepted, ""}});
  // Server pushing activations back.
  EXPECT_FALSE(check_transcript(frames({good_hello()}), frames({wire::SessionAck{1, wire::AckStatus::accepted, ""}, batch(0, 5)})).ok());
  // Device sending a snapshot.
  EXPECT_FALSE(check_transcript(frames({good_hello(), wire::MetricsSnapshot{}}), ok_down).ok());
  // Wrong tap count.
  EXPECT_FALSE(check_transcript(frames({good_hello(), batch(0, 4)}), ok_down).ok());
  // Repeated batch id.
  EXPECT_FALSE(check_transcript(frames({good_hello(), batch(3, 5), batch(3, 5)}), ok_down).ok());
  // Unrequested checkpoint.
  EXPECT_FALSE(check_transcript(frames({good_hello()}), frames({wire::SessionAck{1, wire::AckStatus::accepted, ""}, wire::CheckpointData{}})).ok());
  // Truncated stream.
  auto up = frames({good_hello()});
  up.pop_back();
  EXPECT_FALSE(check_transcript(up, ok_down).ok());
}

TEST(Transcript, RawTokensOnTheWireDetected) {
  wire::CheckpointData leak;
  for (std::uint32_t id : {11u, 12u, 13u}) {
    for (int k = 0; k < 4; ++k) leak.bytes.push_back(static_cast<std::uint8_t>(id >> (8 * k)));
  }
  const auto up = frames({good_hello(), wire::CheckpointRequest{}});
  const auto down = frames({wire::SessionAck{1, wire::AckStatus::accepted, ""}, leak});
  const std::vector<std::vector<std::uint32_t>> rows = {{11, 12, 13}};
  EXPECT_FALSE(check_transcript(up, down, rows).ok());
  EXPECT_TRUE(check_transcript(up, down).ok());
}

TEST(Transport, RateLimitDelaysWrites) {
  auto [a, b] = make_loopback_pair();
  RateLimitedTransport slow(*a, 8.0 * 100'000);  // 100 kB/s
  const std::vector<std::uint8_t> chunk(5'000);
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < 4; ++i) slow.write(chunk);
  const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_GE(elapsed, 0.19);
  EXPECT_LT(elapsed, 0.5);
  std::vector<std::uint8_t> buf(30'000);
  std::size_t got = 0;
  while (got < 20'000) got += b->read_some(std::span(buf).subspan(got), 1000ms);
  EXPECT_EQ(got, 20'000u);
}

TEST(Transport, RecordingCapturesBothDirections) {
  auto [a, b] = make_loopback_pair();
  auto transcript = std::make_shared<Transcript>();
  RecordingTransport rec(*a, transcript);
  const std::vector<std::uint8_t> out = {1, 2, 3};
  rec.write(out);
  const std::vector<std::uint8_t> in = {9, 8};
  b->write(in);
  std::vector<std::uint8_t> buf(8);
  const auto n = rec.read_some(buf, 1000ms);
  EXPECT_EQ(n, 2u);
  EXPECT_EQ(transcript->sent, out);
  EXPECT_EQ(transcript->received, in);
}

TEST(Transport, TcpRoundTrip) {
  TcpListener listener(0, "127.0.0.1");
  std::unique_ptr<TcpTransport> server_side;
  std::thread t([&] { server_side = listener.accept(5000ms); });
  auto client = TcpTransport::connect("127.0.0.1", listener.port(), 5000ms);
  t.join();
  ASSERT_TRUE(server_side);
  MessageChannel c(*client), s(*server_side);
  c.send(good_hello());
  c.close();
  auto m = s.receive(5000ms);
  ASSERT_TRUE(m.has_value());
  EXPECT_EQ(std::get<wire::Hello>(*m), good_hello());
  EXPECT_FALSE(s.receive(5000ms).has_value());
}

TEST(Transport, ParseEndpoint) {
  EXPECT_EQ(parse_endpoint("10.0.0.2:7070"), (std::pair<std::string, std::uint16_t>{"10.0.0.2", 7070}));
  EXPECT_EQ(parse_endpoint(":9000").first, "127.0.0.1");
  EXPECT_THROW(parse_endpoint("nohost"), ConfigError);
  EXPECT_THROW(parse_endpoint("h:99999"), ConfigError);
}

TEST(Transport, ConnectRetriesUntilTimeout) {
  std::uint16_t port;
  {
    TcpListener l(0, "127.0.0.1");
    port = l.port();
  }
  // Refused connections are retried so a device may start before its server.
  EXPECT_THROW(TcpTransport::connect("127.0.0.1", port, 300ms), TimeoutError);
}
