#pragma once

#include <stdexcept>
#include <string>

namespace ansync {

// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Container does not start with the expected magic bytes.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Container payload is shorter than the header declares.
class TruncationError : public Error {
 public:
  using Error::Error;
};

// Contents violate a schema invariant (duplicate names, bad values, ...).
class SchemaError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class SegmentationError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

class EmptyInputError : public Error {
 public:
  using Error::Error;
};

class ParameterError : public Error {
 public:
  using Error::Error;
};

// Non-finite parameters encountered during training.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

// Operation applied to a value in the wrong state (e.g. convolving twice).
class StateError : public Error {
 public:
  using Error::Error;
};

}  // namespace ansync
