#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace mtf {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or matrix shapes are incompatible with an operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A precondition of an operation does not hold.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Malformed input record. `line()` is 1-based; 0 when not tied to a line.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Timestamps do not form a uniform 5-minute grid.
class GapError : public Error {
 public:
  GapError(const std::string& what, std::vector<std::int64_t> missing)
      : Error(what), missing_(std::move(missing)) {}
  const std::vector<std::int64_t>& missing_bins() const { return missing_; }

 private:
  std::vector<std::int64_t> missing_;
};

/// Training or evaluation produced a non-finite number.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace mtf
