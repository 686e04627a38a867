#include "mobillm/transport.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <thread>

#include "mobillm/error.hpp"

namespace mobillm {

namespace {

struct Pipe {
  std::mutex mutex;
  std::condition_variable cv;
  std::deque<std::uint8_t> data;
  bool closed = false;
};

class LoopbackEndpoint : public Transport {
 public:
  LoopbackEndpoint(std::shared_ptr<Pipe> in, std::shared_ptr<Pipe> out)
      : in_(std::move(in)), out_(std::move(out)) {}

  ~LoopbackEndpoint() override { close(); }

  void write(std::span<const std::uint8_t> bytes) override {
    std::lock_guard lock(out_->mutex);
    if (out_->closed) throw TransportError("loopback: write after close");
    out_->data.insert(out_->data.end(), bytes.begin(), bytes.end());
    out_->cv.notify_all();
  }

  std::size_t read_some(std::span<std::uint8_t> out, Millis timeout) override {
    std::unique_lock lock(in_->mutex);
    auto ready = [&] { return !in_->data.empty() || in_->closed; };
    if (timeout == kNoTimeout) {
      in_->cv.wait(lock, ready);
    } else if (!in_->cv.wait_for(lock, timeout, ready)) {
      throw TimeoutError("loopback: read timed out");
    }
    const std::size_t n = std::min(out.size(), in_->data.size());
    std::copy_n(in_->data.begin(), n, out.begin());
    in_->data.erase(in_->data.begin(), in_->data.begin() + static_cast<std::ptrdiff_t>(n));
    return n;
  }

  void close() override {
    std::lock_guard lock(out_->mutex);
    out_->closed = true;
    out_->cv.notify_all();
  }

 private:
  std::shared_ptr<Pipe> in_;
  std::shared_ptr<Pipe> out_;
};

[[noreturn]] void throw_errno(const std::string& what) {
  throw TransportError(what + ": " + std::strerror(errno));
}

bool wait_fd(int fd, short events, Millis timeout) {
  pollfd p{fd, events, 0};
  const int ms = timeout == kNoTimeout ? -1 : static_cast<int>(std::min<Millis::rep>(timeout.count(), 1 << 30));
  while (true) {
    const int rc = ::poll(&p, 1, ms);
    if (rc > 0) return true;
    if (rc == 0) return false;
    if (errno != EINTR) throw_errno("poll");
  }
}

}  // namespace

std::pair<std::unique_ptr<Transport>, std::unique_ptr<Transport>> make_loopback_pair() {
  auto a_to_b = std::make_shared<Pipe>();
  auto b_to_a = std::make_shared<Pipe>();
  return {std::make_unique<LoopbackEndpoint>(b_to_a, a_to_b),
          std::make_unique<LoopbackEndpoint>(a_to_b, b_to_a)};
}

RateLimitedTransport::RateLimitedTransport(Transport& inner, double bits_per_second)
    : inner_(inner), bits_per_second_(bits_per_second) {
  if (!(bits_per_second > 0)) throw ConfigError("rate limit must be positive");
}

void RateLimitedTransport::write(std::span<const std::uint8_t> bytes) {
  using namespace std::chrono;
  const auto cost = duration_cast<steady_clock::duration>(
      duration<double>(static_cast<double>(bytes.size()) * 8.0 / bits_per_second_));
  const auto start = std::max(steady_clock::now(), busy_until_);
  busy_until_ = start + cost;
  std::this_thread::sleep_until(busy_until_);
  inner_.write(bytes);
}

void RecordingTransport::write(std::span<const std::uint8_t> bytes) {
  {
    std::lock_guard lock(transcript_->mutex);
    transcript_->sent.insert(transcript_->sent.end(), bytes.begin(), bytes.end());
  }
  inner_.write(bytes);
}

std::size_t RecordingTransport::read_some(std::span<std::uint8_t> out, Millis timeout) {
  const std::size_t n = inner_.read_some(out, timeout);
  std::lock_guard lock(transcript_->mutex);
  transcript_->received.insert(transcript_->received.end(), out.begin(), out.begin() + static_cast<std::ptrdiff_t>(n));
  return n;
}

TcpTransport::~TcpTransport() {
  if (fd_ >= 0) ::close(fd_);
}

std::unique_ptr<TcpTransport> TcpTransport::connect(const std::string& host, std::uint16_t port,
                                                    Millis timeout) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (int rc = ::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res); rc != 0) {
    throw TransportError("resolve " + host + ": " + ::gai_strerror(rc));
  }
  std::unique_ptr<addrinfo, decltype(&::freeaddrinfo)> guard(res, &::freeaddrinfo);

  const auto deadline = std::chrono::steady_clock::now() +
                        (timeout == kNoTimeout ? std::chrono::hours(24 * 365) : timeout);
  // The server may still be starting; retry refused connections until the deadline.
  while (true) {
    const int fd = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
    if (fd < 0) throw_errno("socket");
    if (::connect(fd, res->ai_addr, res->ai_addrlen) == 0) {
      int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
      return std::make_unique<TcpTransport>(fd);
    }
    const int err = errno;
    ::close(fd);
    if (err != ECONNREFUSED || std::chrono::steady_clock::now() >= deadline) {
      errno = err;
      if (err == ECONNREFUSED) throw TimeoutError("connect " + host + ":" + std::to_string(port) + ": refused until timeout");
      throw_errno("connect " + host + ":" + std::to_string(port));
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
}

void TcpTransport::write(std::span<const std::uint8_t> bytes) {
  std::size_t sent = 0;
  while (sent < bytes.size()) {
    const ssize_t n = ::send(fd_, bytes.data() + sent, bytes.size() - sent, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw_errno("send");
    }
    sent += static_cast<std::size_t>(n);
  }
}

std::size_t TcpTransport::read_some(std::span<std::uint8_t> out, Millis timeout) {
  if (!wait_fd(fd_, POLLIN, timeout)) throw TimeoutError("tcp: read timed out");
  while (true) {
    const ssize_t n = ::recv(fd_, out.data(), out.size(), 0);
    if (n >= 0) return static_cast<std::size_t>(n);
    if (errno == EINTR) continue;
    if (errno == ECONNRESET) return 0;
    throw_errno("recv");
  }
}

void TcpTransport::close() {
  if (!write_closed_ && fd_ >= 0) {
    ::shutdown(fd_, SHUT_WR);
    write_closed_ = true;
  }
}

TcpListener::TcpListener(std::uint16_t port, const std::string& host) {
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) throw_errno("socket");
  int one = 1;
  ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    ::close(fd_);
    throw ConfigError("listen address must be an IPv4 literal: " + host);
  }
  if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 || ::listen(fd_, 1) != 0) {
    const int err = errno;
    ::close(fd_);
    errno = err;
    throw_errno("bind/listen on port " + std::to_string(port));
  }
  socklen_t len = sizeof(addr);
  ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

TcpListener::~TcpListener() {
  if (fd_ >= 0) ::close(fd_);
}

std::unique_ptr<TcpTransport> TcpListener::accept(Millis timeout) {
  if (!wait_fd(fd_, POLLIN, timeout)) throw TimeoutError("accept timed out");
  const int fd = ::accept(fd_, nullptr, nullptr);
  if (fd < 0) throw_errno("accept");
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  return std::make_unique<TcpTransport>(fd);
}

std::pair<std::string, std::uint16_t> parse_endpoint(const std::string& text) {
  const auto colon = text.rfind(':');
  if (colon == std::string::npos) throw ConfigError("expected HOST:PORT, got '" + text + "'");
  std::string host = text.substr(0, colon);
  if (host.empty()) host = "127.0.0.1";
  const std::string port_text = text.substr(colon + 1);
  try {
    std::size_t used = 0;
    const unsigned long port = std::stoul(port_text, &used);
    if (used != port_text.size() || port > 65535) throw std::out_of_range("port");
    return {host, static_cast<std::uint16_t>(port)};
  } catch (const std::logic_error&) {
    throw ConfigError("invalid port in '" + text + "'");
  }
}

}  // namespace mobillm
