#pragma once

#include <stdexcept>
#include <string>

namespace gvfit {

// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class RangeError : public Error {
 public:
  using Error::Error;
};

// Quaternion with zero norm cannot be normalized into a rotation.
class DegenerateRotation : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Violated precondition of an operation contract.
class ContractError : public Error {
 public:
  using Error::Error;
};

class RenderError : public Error {
 public:
  RenderError(const std::string& what, std::size_t gaussian)
      : Error(what), gaussian_(gaussian) {}
  std::size_t gaussian() const noexcept { return gaussian_; }

 private:
  std::size_t gaussian_;
};

// Backward pass invoked with a camera/volume that does not match its forward state.
class StateError : public Error {
 public:
  using Error::Error;
};

class OptimizerError : public Error {
 public:
  using Error::Error;
};

class EmptyGeometryError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Binary format errors. Each failure mode is a distinct type.
class FormatError : public Error {
 public:
  using Error::Error;
};
class BadMagicError : public FormatError {
 public:
  using FormatError::FormatError;
};
class VersionMismatchError : public FormatError {
 public:
  using FormatError::FormatError;
};
class TruncatedError : public FormatError {
 public:
  using FormatError::FormatError;
};

}  // namespace gvfit
