#pragma once

#include <stdexcept>
#include <string>

namespace sidefx {

// Base for every error the library raises. Callers that only care about
// "something went wrong with the input" can catch this one type.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad configuration or arguments (CLI exit status 1).
struct ConfigError : Error {
  using Error::Error;
};

// Malformed or inconsistent data (CLI exit status 2).
struct DataError : Error {
  using Error::Error;
};

// A source could not be opened or written.
struct IoError : DataError {
  using DataError::DataError;
};

}  // namespace sidefx
