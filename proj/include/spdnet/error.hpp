#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace spdnet {

// Iterative numerics failed to converge, produced NaN, or hit a singularity.
class NumericFailure : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// A spectral function was applied outside its domain (log / inv_sqrt of a
// matrix that is not positive definite).
class DomainError : public NumericFailure {
public:
  DomainError(const std::string& what, double smallest_eigenvalue)
      : NumericFailure(what + " (smallest eigenvalue " +
                       std::to_string(smallest_eigenvalue) + ")"),
        smallest_(smallest_eigenvalue) {}

  double smallest_eigenvalue() const noexcept { return smallest_; }

private:
  double smallest_;
};

// Malformed binary payload. Carries the byte offset where decoding stopped.
class FormatError : public std::runtime_error {
public:
  FormatError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " at byte offset " + std::to_string(offset)),
        detail_(what), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }
  const std::string& detail() const noexcept { return detail_; }

private:
  std::string detail_;
  std::size_t offset_;
};

// Bad configuration text.
class ParseError : public std::runtime_error {
public:
  ParseError(const std::string& key, int line, const std::string& what)
      : std::runtime_error("config line " + std::to_string(line) + ", key '" +
                           key + "': " + what),
        key_(key), line_(line) {}

  const std::string& key() const noexcept { return key_; }
  int line() const noexcept { return line_; }

private:
  std::string key_;
  int line_;
};

// An operation was called on an object in the wrong state (e.g. backward
// without a cached forward pass).
class StateError : public std::logic_error {
public:
  using std::logic_error::logic_error;
};

}  // namespace spdnet
