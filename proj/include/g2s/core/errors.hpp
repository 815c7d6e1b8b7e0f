#pragma once

#include <stdexcept>
#include <string>

namespace g2s {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor dimensions.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid model or layer configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Bad user-supplied data (too few frames, empty text, ...).
class InputError : public Error {
 public:
  using Error::Error;
};

// Caller violated a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

// Unsupported file encoding (WAV sub-format, checkpoint version, ...).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace g2s
