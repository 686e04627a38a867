#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace mobillm {

using Millis = std::chrono::milliseconds;
inline constexpr Millis kNoTimeout = Millis::max();

// Reliable ordered byte stream.
class Transport {
 public:
  virtual ~Transport() = default;

  virtual void write(std::span<const std::uint8_t> bytes) = 0;
  // Blocks until at least one byte is available. Returns 0 once the peer has
  // closed and everything was read; throws TimeoutError when `timeout`
  // passes without data.
  virtual std::size_t read_some(std::span<std::uint8_t> out, Millis timeout) = 0;
  // Closes our sending direction; the peer sees end-of-stream.
  virtual void close() = 0;
};

// Two connected in-process endpoints.
std::pair<std::unique_ptr<Transport>, std::unique_ptr<Transport>> make_loopback_pair();

// Emulates a link of fixed bandwidth: each write blocks the caller for
// bytes * 8 / rate seconds (queued behind earlier writes) before the bytes
// are delivered.
class RateLimitedTransport : public Transport {
 public:
  RateLimitedTransport(Transport& inner, double bits_per_second);

  void write(std::span<const std::uint8_t> bytes) override;
  std::size_t read_some(std::span<std::uint8_t> out, Millis timeout) override {
    return inner_.read_some(out, timeout);
  }
  void close() override { inner_.close(); }

 private:
  Transport& inner_;
  double bits_per_second_;
  std::chrono::steady_clock::time_point busy_until_{};
};

// Both directions of a connection as seen from one endpoint.
struct Transcript {
  std::mutex mutex;
  std::vector<std::uint8_t> sent;
  std::vector<std::uint8_t> received;
};

class RecordingTransport : public Transport {
 public:
  RecordingTransport(Transport& inner, std::shared_ptr<Transcript> transcript)
      : inner_(inner), transcript_(std::move(transcript)) {}

  void write(std::span<const std::uint8_t> bytes) override;
  std::size_t read_some(std::span<std::uint8_t> out, Millis timeout) override;
  void close() override { inner_.close(); }

 private:
  Transport& inner_;
  std::shared_ptr<Transcript> transcript_;
};

class TcpTransport : public Transport {
 public:
  explicit TcpTransport(int fd) : fd_(fd) {}
  ~TcpTransport() override;
  TcpTransport(const TcpTransport&) = delete;
  TcpTransport& operator=(const TcpTransport&) = delete;

  static std::unique_ptr<TcpTransport> connect(const std::string& host, std::uint16_t port,
                                               Millis timeout);

  void write(std::span<const std::uint8_t> bytes) override;
  std::size_t read_some(std::span<std::uint8_t> out, Millis timeout) override;
  void close() override;

 private:
  int fd_;
  bool write_closed_ = false;
};

class TcpListener {
 public:
  // port 0 picks an ephemeral port; see port().
  explicit TcpListener(std::uint16_t port, const std::string& host = "0.0.0.0");
  ~TcpListener();
  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;

  std::uint16_t port() const noexcept { return port_; }
  std::unique_ptr<TcpTransport> accept(Millis timeout);

 private:
  int fd_;
  std::uint16_t port_;
};

// "HOST:PORT" or ":PORT" (host defaults to 127.0.0.1).
std::pair<std::string, std::uint16_t> parse_endpoint(const std::string& text);

}  // namespace mobillm
