#pragma once

#include <stdexcept>
#include <string>

namespace mailtls {

/// Input could not be parsed (bad file row, bad hex, bad JSON record).
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller broke a documented precondition.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Inconsistent configuration, e.g. a probe plan naming an unknown suite.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A versioned file carried a format header this build does not understand.
class FormatVersionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mailtls

namespace mailtls {

/// Command-line misuse: missing or conflicting inputs.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mailtls
