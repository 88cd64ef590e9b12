#include "usev/error.hpp"

namespace usev {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Shape: return "shape";
    case ErrorKind::Length: return "length";
    case ErrorKind::Parameter: return "parameter";
    case ErrorKind::DegenerateInput: return "degenerate-input";
    case ErrorKind::Format: return "format";
    case ErrorKind::Io: return "io";
    case ErrorKind::Usage: return "usage";
  }
  return "unknown";
}

void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, std::string(to_string(kind)) + " error: " + what);
}

}  // namespace usev
