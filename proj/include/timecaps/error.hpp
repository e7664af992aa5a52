#pragma once

#include <stdexcept>
#include <string>

namespace timecaps {

// Base of every error raised by the library. Callers that only care about
// "something in timecaps failed" catch this.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what), detail_(what) {}
  Error(const std::string& kind, const std::string& detail)
      : std::runtime_error(kind + ": " + detail), detail_(detail) {}

  // Message without the kind prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  std::string detail_;
};

// Tensor extents or kernel geometry that do not line up.
class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error("shape error", what) {}
};

// Invalid scalar argument (axis, stride, iteration count, class index...).
class ArgumentError : public Error {
 public:
  explicit ArgumentError(const std::string& what) : Error("argument error", what) {}
};

// Inconsistent ModelConfig / TrainConfig / run configuration.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error("config error", what) {}
};

// Malformed dataset file.
class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what) : Error("format error", what) {}
};

class CheckpointError : public Error {
 public:
  explicit CheckpointError(const std::string& what) : Error("checkpoint error", what) {}
};

}  // namespace timecaps
