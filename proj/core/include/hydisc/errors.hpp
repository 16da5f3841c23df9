#pragma once

#include <stdexcept>
#include <string>

namespace hydisc {

// Shape disagreement between tensors; the message names both shapes.
class DimensionError : public std::runtime_error {
 public:
  explicit DimensionError(const std::string& what) : std::runtime_error(what) {}
};

// An API precondition was violated (wrong mode, missing graph, frozen
// parameters touched, ...).
class ContractError : public std::runtime_error {
 public:
  explicit ContractError(const std::string& what) : std::runtime_error(what) {}
};

// Invalid or inconsistent configuration; the message names the field.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Malformed input file; the message carries the line number where known.
class ParseError : public std::runtime_error {
 public:
  explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

// A computation produced NaN or Inf. Finite values are an invariant of every
// tensor op, so this always indicates a bug or pathological input.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

// An attempt to read a private-modality feature body without a grant that
// covers the owning client (or a scenario that shares the modality).
class AccessError : public std::runtime_error {
 public:
  explicit AccessError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace hydisc
