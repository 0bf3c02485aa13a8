#include "masred/error.hpp"

namespace masred {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::io: return "io";
    case ErrorKind::format: return "format";
    case ErrorKind::range: return "range";
    case ErrorKind::invalid_argument: return "invalid-argument";
    case ErrorKind::protocol: return "protocol";
    case ErrorKind::oracle_terminated: return "oracle-terminated";
    case ErrorKind::timeout: return "timeout";
    case ErrorKind::divergence: return "divergence";
    case ErrorKind::state: return "state";
  }
  return "unknown";
}

}  // namespace masred
