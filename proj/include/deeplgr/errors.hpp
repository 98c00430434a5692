#pragma once

#include <stdexcept>
#include <string>

namespace deeplgr {

/// Shape or argument inconsistency detected by an operator or module.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Invalid run configuration (unknown key, inconsistent dims, bad variant name).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dataset or checkpoint file could not be read or is malformed.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Misuse of the gradient tape (double backward, mutation of a pinned tensor).
class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Non-finite values appeared in the loss or gradients.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace deeplgr
