#pragma once

#include <stdexcept>
#include <string>

namespace omnidiff {

/// Invalid argument or violated precondition.
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Mathematically undefined request, e.g. a posterior over an unreachable pair.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Input exceeds a size limit (enumeration guard, max_len, canvas size).
class CapacityError : public std::length_error {
 public:
  using std::length_error::length_error;
};

class EncodingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DecodingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training diverged (non-finite loss or gradient).
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Base for checkpoint load failures.
class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class VersionError : public LoadError {
 public:
  using LoadError::LoadError;
};

class TruncatedError : public LoadError {
 public:
  using LoadError::LoadError;
};

class ManifestError : public LoadError {
 public:
  using LoadError::LoadError;
};

}  // namespace omnidiff
