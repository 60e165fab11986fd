#pragma once

#include <stdexcept>
#include <string>

namespace fgfp {

// Base of everything the library throws on purpose. The CLI maps the
// subclasses onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

// Malformed bytes on disk (datasets or checkpoints).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Well-formed bytes that violate a model invariant.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

class FitError : public Error {
 public:
  using Error::Error;
};

// Filesystem failures while reading or writing artifacts.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace fgfp
