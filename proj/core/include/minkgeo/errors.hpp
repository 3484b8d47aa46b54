#pragma once

#include <stdexcept>
#include <string>

namespace minkgeo {

/// I/O failure with a machine-checkable cause.
class IoError : public std::runtime_error {
 public:
  enum class Code {
    bad_magic,
    truncated,
    dimension_overflow,
    bad_units_tag,
    read_failure,
    write_failure,
    bad_manifest,
    checksum_mismatch,
  };

  IoError(Code code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  Code code() const { return code_; }

 private:
  Code code_;
};

/// Raised when an iterative numerical procedure produces non-finite values
/// (training divergence, inversion blow-up). Carries the step/epoch index.
class NumericalError : public std::runtime_error {
 public:
  NumericalError(const std::string& what, long step = -1)
      : std::runtime_error(what), step_(step) {}

  long step() const { return step_; }

 private:
  long step_;
};

}  // namespace minkgeo
