#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace metasym {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A NaN or Inf appeared where only finite values are legal.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
  ConfigError(const std::string& what, std::string key) : Error(what), key_(std::move(key)) {}
  /// Dotted path of the offending configuration key, empty when not tied to one.
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Training loss exceeded the divergence threshold.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// A simulator detected that its numerical scheme is no longer trustworthy.
class SimulationError : public Error {
 public:
  using Error::Error;
};

/// The truncated Fock basis was too small for the state it had to hold.
class TruncationError : public SimulationError {
 public:
  using SimulationError::SimulationError;
};

}  // namespace metasym
