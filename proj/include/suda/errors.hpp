#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace suda {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shapes or extents that do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Value outside the mathematical domain of an operation (log of 0, score of 1, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Caller broke an API precondition that is not about shapes.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Non-finite values, non-convergent decompositions.
class NumericError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class ConsistencyError : public Error {
 public:
  using Error::Error;
};

class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

// Malformed on-disk artifact; carries the byte offset at which parsing failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace suda
