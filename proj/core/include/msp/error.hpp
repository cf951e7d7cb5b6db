#pragma once

#include <stdexcept>
#include <string>

namespace msp {

// Failure categories surfaced to callers and tests. Every throw site picks the
// most specific kind; "contract" covers caller-side API misuse.
enum class ErrorKind {
  parse,                 // malformed text input (xyz, ply, config, checkpoint header)
  io,                    // filesystem failures
  shape,                 // tensor shape mismatch
  contract,              // API precondition violated
  invalid_spec,          // bad generation / masking / partition parameters
  degenerate_mask,       // masking left nothing to train on
  degenerate_target,     // no usable rows for a loss target
  degenerate_probe,      // probe split has no signal to measure
  incompatible_checkpoint,
  numeric,               // NaN / divergence detected
};

inline const char* error_kind_name(ErrorKind k) {
  switch (k) {
    case ErrorKind::parse: return "parse error";
    case ErrorKind::io: return "io error";
    case ErrorKind::shape: return "shape error";
    case ErrorKind::contract: return "contract error";
    case ErrorKind::invalid_spec: return "invalid spec";
    case ErrorKind::degenerate_mask: return "degenerate mask";
    case ErrorKind::degenerate_target: return "degenerate target";
    case ErrorKind::degenerate_probe: return "degenerate probe";
    case ErrorKind::incompatible_checkpoint: return "incompatible checkpoint";
    case ErrorKind::numeric: return "numeric error";
  }
  return "error";
}

class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(error_kind_name(kind)) + ": " + message),
        kind_(kind) {}

  ErrorKind kind() const { return kind_; }

private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool cond, ErrorKind kind, const std::string& message) {
  if (!cond) fail(kind, message);
}

}  // namespace msp
