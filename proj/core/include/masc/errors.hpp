#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace masc {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Reduction or slicing axis out of range.
class AxisError : public Error {
 public:
  using Error::Error;
};

/// A scalar argument violates its documented range.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// A call-order or usage contract was broken (e.g. backward on a non-scalar).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// A model, training or dataset configuration is inconsistent.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A non-finite value appeared where a finite one is required.
class NumericFault : public Error {
 public:
  using Error::Error;
};

/// Filesystem failure (open, read, write).
class IoError : public Error {
 public:
  using Error::Error;
};

/// Binary pose/checkpoint file could not be parsed.
class FormatError : public Error {
 public:
  enum class Kind { kMalformedHeader, kVersionMismatch, kShapeMismatch, kTruncated };

  FormatError(Kind kind, std::size_t byte_offset, const std::string& what)
      : Error(what + " (byte offset " + std::to_string(byte_offset) + ")"),
        kind_(kind),
        byte_offset_(byte_offset) {}

  Kind kind() const noexcept { return kind_; }
  std::size_t byte_offset() const noexcept { return byte_offset_; }

 private:
  Kind kind_;
  std::size_t byte_offset_;
};

}  // namespace masc
