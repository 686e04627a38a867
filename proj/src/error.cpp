#include "mobillm/error.hpp"

namespace mobillm {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::dimension: return "dimension";
    case ErrorKind::empty_input: return "empty_input";
    case ErrorKind::input: return "input";
    case ErrorKind::precision: return "precision";
    case ErrorKind::format: return "format";
    case ErrorKind::io: return "io";
    case ErrorKind::config: return "config";
    case ErrorKind::state: return "state";
    case ErrorKind::protocol: return "protocol";
    case ErrorKind::frame: return "frame";
    case ErrorKind::desync: return "desync";
    case ErrorKind::size: return "size";
    case ErrorKind::handshake: return "handshake";
    case ErrorKind::timeout: return "timeout";
    case ErrorKind::transport: return "transport";
  }
  return "unknown";
}

}  // namespace mobillm
