#pragma once

#include <stdexcept>
#include <string>

namespace ustest {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid argument: bad index, wrong dimension, non-PD matrix, unsupported degree.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration (config file, flags, or an experiment that cannot be run).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Wald-type statistic requested where the limiting variance is zero.
class SingularHypothesisError : public Error {
 public:
  using Error::Error;
};

/// The Bernoulli design selected no tuple (N-hat = 0).
class DegenerateSampleError : public Error {
 public:
  using Error::Error;
};

/// A data-driven normalizer came out non-positive.
class DegenerateStudentizerError : public Error {
 public:
  using Error::Error;
};

/// Two exact computation paths that must agree did not.
class ConsistencyError : public Error {
 public:
  using Error::Error;
};

}  // namespace ustest
