#pragma once

#include <stdexcept>
#include <string>

namespace dllrnn {

// Exception hierarchy. The CLI maps these onto exit codes.

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shapes or extents that do not fit together.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A caller broke an API precondition (e.g. non-scalar backward root).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Input carries no usable signal (all-zero waveform, zero-energy reference).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

class GeometryError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed file contents; the message carries the byte offset when known.
class ParseError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace dllrnn
