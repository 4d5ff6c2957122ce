#pragma once

#include <stdexcept>
#include <string>

namespace exal {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class SingularMatrix : public Error {
 public:
  using Error::Error;
};

// Dataset / checkpoint I/O.
class IoError : public Error {
 public:
  using Error::Error;
};

class ManifestError : public IoError {
 public:
  using IoError::IoError;
};

class TruncatedTensor : public IoError {
 public:
  using IoError::IoError;
};

class ChecksumMismatch : public IoError {
 public:
  using IoError::IoError;
};

}  // namespace exal
