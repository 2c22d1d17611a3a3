#pragma once

#include <stdexcept>
#include <string>

namespace idb {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a computation produces or consumes non-finite values.
class NumericalFailure : public Error {
 public:
  explicit NumericalFailure(const std::string& where)
      : Error("numerical failure: " + where) {}
};

}  // namespace idb
