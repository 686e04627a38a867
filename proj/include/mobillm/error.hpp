#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mobillm {

enum class ErrorKind {
  dimension,
  empty_input,
  input,
  precision,
  format,
  io,
  config,
  state,
  protocol,
  frame,
  desync,
  size,
  handshake,
  timeout,
  transport,
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

template <ErrorKind K>
class KindError : public Error {
 public:
  explicit KindError(const std::string& what) : Error(K, what) {}
};

using DimensionError = KindError<ErrorKind::dimension>;
using EmptyInputError = KindError<ErrorKind::empty_input>;
using InputError = KindError<ErrorKind::input>;
using PrecisionError = KindError<ErrorKind::precision>;
using FormatError = KindError<ErrorKind::format>;
using IoError = KindError<ErrorKind::io>;
using ConfigError = KindError<ErrorKind::config>;
using StateError = KindError<ErrorKind::state>;
using ProtocolError = KindError<ErrorKind::protocol>;
using FrameError = KindError<ErrorKind::frame>;
using DesyncError = KindError<ErrorKind::desync>;
using SizeError = KindError<ErrorKind::size>;
using HandshakeError = KindError<ErrorKind::handshake>;
using TimeoutError = KindError<ErrorKind::timeout>;
using TransportError = KindError<ErrorKind::transport>;

}  // namespace mobillm
