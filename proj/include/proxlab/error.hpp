#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace proxlab {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not conform for the named op.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Input outside an op's mathematical domain (e.g. log of a non-positive value).
class DomainError : public Error {
 public:
  using Error::Error;
};

// A NaN or infinity reached a place where only finite values are legal.
// `indices` lists the offending element (token) positions.
class NonFiniteError : public Error {
 public:
  NonFiniteError(const std::string& what, std::vector<std::size_t> indices)
      : Error(what), indices_(std::move(indices)) {}
  const std::vector<std::size_t>& indices() const { return indices_; }

 private:
  std::vector<std::size_t> indices_;
};

// Policy versions that violate ordering (future-versioned data, gaps, evictions).
class VersionError : public Error {
 public:
  using Error::Error;
};

// Collects every validation problem found in a configuration.
class ConfigError : public Error {
 public:
  explicit ConfigError(std::vector<std::string> issues);
  const std::vector<std::string>& issues() const { return issues_; }

 private:
  std::vector<std::string> issues_;
};

// Metrics files that fail to parse or carry an unexpected schema version.
class SchemaError : public Error {
 public:
  using Error::Error;
};

}  // namespace proxlab
