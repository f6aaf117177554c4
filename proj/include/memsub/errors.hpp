#pragma once

#include <stdexcept>
#include <string>

namespace memsub {

/// Base of every error thrown by the toolkit.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
  using Error::Error;
};

struct IndexError : Error {
  using Error::Error;
};

struct ArgumentError : Error {
  using Error::Error;
};

/// Raised when an operation depends on state that is missing or stale,
/// e.g. a forward trace that no longer matches its parameters.
struct StateError : Error {
  using Error::Error;
};

struct MaskIntegrityError : Error {
  using Error::Error;
};

struct DivergenceError : Error {
  using Error::Error;
};

/// Malformed or version-mismatched file.
struct FormatError : Error {
  using Error::Error;
};

/// Evaluation protocol violation (mask-source prompts leaking into a test pool).
struct ProtocolError : Error {
  using Error::Error;
};

}  // namespace memsub
