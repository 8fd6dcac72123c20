#pragma once

#include <stdexcept>
#include <string>

namespace tasknas {

// Error categories map onto CLI exit codes: usage 1, data 2, numerical 3.

class UsageError : public std::invalid_argument {
 public:
  explicit UsageError(const std::string& what) : std::invalid_argument(what) {}
};

class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

/// Raised when a layer's declared shapes are incompatible or an input does not
/// match the network's declared input shape.
class ShapeError : public DataError {
 public:
  explicit ShapeError(const std::string& what) : DataError(what) {}
};

class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace tasknas
