#pragma once

#include <stdexcept>
#include <string>

namespace spwc {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition on an argument was violated (empty batch, psi outside [0,1], ...).
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Shapes do not chain (matrix widths, vector lengths).
class StructuralError : public Error {
 public:
  using Error::Error;
};

/// An index or identifier does not exist (unknown head, missing task).
class LookupError : public Error {
 public:
  using Error::Error;
};

/// A non-finite value appeared where finiteness is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A data file is malformed. The message names the file and byte offset.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace spwc
