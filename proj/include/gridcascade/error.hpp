#pragma once

#include <stdexcept>
#include <string>

namespace gridcascade {

/// Base class for all library errors.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Malformed input text (MATPOWER case, JSON document, JSONL pool).
class ParseError : public Error {
  public:
    using Error::Error;
};

/// A domain invariant does not hold (bad grid, inconsistent dims, bad flag value).
class ValidationError : public Error {
  public:
    using Error::Error;
};

/// File or schema problem on a persisted artifact.
class IoError : public Error {
  public:
    using Error::Error;
};

/// Numerical failure: singular system, unbalanced island, non-finite values.
class NumericsError : public Error {
  public:
    using Error::Error;
};

}  // namespace gridcascade
