#pragma once

#include <stdexcept>
#include <string>

namespace fss {

// Base type for everything this library throws on purpose.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Bad arguments / violated preconditions.
class InvalidInputError : public Error {
 public:
  using Error::Error;
};

// On-disk data that does not match its declared schema.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Episode construction could not be satisfied (e.g. pool too small).
class SamplingError : public Error {
 public:
  using Error::Error;
};

// Non-finite values reached a numeric kernel.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Factorization failed even after the jitter escalation ladder.
class ConditioningError : public Error {
 public:
  using Error::Error;
};

// Experiment configuration failed validation.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// An internal guarantee (e.g. the no-fine-tune contract) was broken.
class ContractViolationError : public Error {
 public:
  using Error::Error;
};

}  // namespace fss
