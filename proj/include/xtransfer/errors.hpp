#pragma once

#include <stdexcept>
#include <string>

namespace xtransfer {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
  using Error::Error;
};

// Operation applied to a perturbation of the wrong threat-model kind.
struct KindMismatch : Error {
  using Error::Error;
};

struct ResolutionMismatch : Error {
  using Error::Error;
};

// Bad user input: configs, manifests, argument ranges. `pointer` is a JSON
// pointer into the offending document when one applies.
struct ValidationError : Error {
  ValidationError(std::string message, std::string pointer = {})
      : Error(std::move(message)), pointer(std::move(pointer)) {}
  std::string pointer;
};

struct BackendError : Error {
  using Error::Error;
};

struct NonFiniteLoss : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

struct CheckpointError : Error {
  using Error::Error;
};

struct UnknownAttacker : Error {
  using Error::Error;
};

struct DigestMismatch : Error {
  using Error::Error;
};

struct InvariantViolation : Error {
  using Error::Error;
};

}  // namespace xtransfer
