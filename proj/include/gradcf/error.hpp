#pragma once

#include <stdexcept>
#include <string>

namespace gradcf {

// Base of every error raised by the library. Catch this at the CLI boundary.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

// Class index outside [0, K), label out of range, bad config value.
class RangeError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed file contents: truncated payloads, wrong magic, bad JSON schema,
// non-numeric CSV cells.
class ParseError : public Error {
 public:
  using Error::Error;
};

// Structural invariant violated by otherwise well-formed input.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Every masking unit is already in use.
class BudgetError : public Error {
 public:
  using Error::Error;
};

}  // namespace gradcf
