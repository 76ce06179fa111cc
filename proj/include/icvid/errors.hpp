#pragma once

#include <stdexcept>
#include <string>

namespace icvid {

// Error taxonomy maps onto CLI exit codes: UsageError -> 1, DataError -> 2,
// NumericError -> 3. ShapeError and ProtocolError are internal-contract
// violations surfaced through the same channels (shape -> usage, protocol ->
// data) when they reach the CLI boundary.

struct UsageError : std::runtime_error {
  explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Raised when a non-finite value is detected mid-computation. `step` carries
// the training/sampling step index for diagnostics (-1 when not applicable).
struct NumericError : std::runtime_error {
  long long step = -1;
  explicit NumericError(const std::string& msg, long long step_index = -1)
      : std::runtime_error(msg), step(step_index) {}
};

// Malformed judge wire payloads. The raw payload is retained for forensics.
struct ProtocolError : std::runtime_error {
  std::string raw;
  ProtocolError(const std::string& msg, std::string raw_payload)
      : std::runtime_error(msg), raw(std::move(raw_payload)) {}
};

}  // namespace icvid
