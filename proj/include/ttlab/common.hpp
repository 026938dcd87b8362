#ifndef TTLAB_COMMON_HPP
#define TTLAB_COMMON_HPP

#include <stdexcept>
#include <string>

namespace ttlab {

// Error taxonomy. Every throwing path in the library uses one of these so
// callers (and tests) can tell a bad shape from a bad file.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor/layer shape mismatches; message carries the offending dimensions.
struct ShapeError : Error {
  using Error::Error;
};

// Invalid configuration values (split index out of range, bad group count, ...).
struct ConfigError : Error {
  using Error::Error;
};

// Bad runtime inputs (label out of range, rotation k not in 0..3, ...).
struct InputError : Error {
  using Error::Error;
};

// Operations called in the wrong order (backward without a forward, ...).
struct StateError : Error {
  using Error::Error;
};

// File I/O failures; message carries path and byte offset where known.
struct IoError : Error {
  using Error::Error;
};

}  // namespace ttlab

#endif  // TTLAB_COMMON_HPP
