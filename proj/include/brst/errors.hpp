#pragma once

#include <stdexcept>
#include <string>

namespace brst {

// Base class for all library errors.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape/dimension disagreement between array operands.
struct ShapeError : Error {
  explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// Invalid model or training configuration.
struct ConfigError : Error {
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Non-finite values, non-scalar losses, and other numeric contract breaks.
struct NumericError : Error {
  explicit NumericError(const std::string& msg) : Error(msg) {}
};

// Bad user-facing input (manifests, token ids, empty n-best lists, ...).
struct InputError : Error {
  explicit InputError(const std::string& msg) : Error(msg) {}
};

// Target sequence cannot be reached by any CTC alignment.
struct InfeasibleTargetError : Error {
  explicit InfeasibleTargetError(const std::string& msg) : Error(msg) {}
};

// Checkpoint container problems: bad magic, missing/truncated/mismatched components.
struct CheckpointError : Error {
  explicit CheckpointError(const std::string& msg) : Error(msg) {}
};

// File system / byte-level I/O failures.
struct IoError : Error {
  explicit IoError(const std::string& msg) : Error(msg) {}
};

// Statistically degenerate input (e.g. zero-variance matrix fed to CKA).
struct DegenerateInputError : Error {
  explicit DegenerateInputError(const std::string& msg) : Error(msg) {}
};

}  // namespace brst
