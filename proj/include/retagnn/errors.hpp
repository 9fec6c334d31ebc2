#pragma once

#include <stdexcept>
#include <string>

namespace retagnn {

/// Bad or inconsistent configuration (unknown key, missing file, invalid value).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input data that cannot be used (too many malformed lines, empty result).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite loss or gradient during training.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition of an API call was violated by the caller.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Evaluation protocol misuse, e.g. overlapping ISR user sets.
class ProtocolError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace retagnn
