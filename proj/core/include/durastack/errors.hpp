#pragma once

#include <stdexcept>
#include <string>

namespace durastack {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or out-of-domain input data (CSV rows, requests, schema drift).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or command-line usage.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// A numerical procedure could not produce a valid result.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A model artifact is unreadable: wrong version, truncated or corrupt.
class ArtifactError : public DataError {
 public:
  using DataError::DataError;
};

}  // namespace durastack
