#pragma once

#include <stdexcept>
#include <string>

namespace hdvp {

/// Failure categories. Each maps onto one CLI exit code.
enum class ErrorKind {
  kShape,
  kInvalidArgument,
  kConfig,
  kData,
  kIo,
  kDivergence,
  kIncompatible,
  kCorpusMissing,
  kUnsupported,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kShape: return "shape error";
    case ErrorKind::kInvalidArgument: return "invalid argument";
    case ErrorKind::kConfig: return "config error";
    case ErrorKind::kData: return "data error";
    case ErrorKind::kIo: return "i/o error";
    case ErrorKind::kDivergence: return "training divergence";
    case ErrorKind::kIncompatible: return "incompatible checkpoint";
    case ErrorKind::kCorpusMissing: return "corpus missing";
    case ErrorKind::kUnsupported: return "unsupported";
  }
  return "error";
}

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace hdvp
