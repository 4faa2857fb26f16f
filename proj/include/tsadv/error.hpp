#pragma once

#include <stdexcept>
#include <string>

namespace tsadv {

// Every failure raised by the library derives from Error so callers (the CLI
// in particular) can map the category onto an exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid shapes, architecture or hyperparameter settings.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// API misuse: bad label, tape replayed twice, normalizing twice, ...
class UsageError : public Error {
 public:
  using Error::Error;
};

// Dataset files that do not parse or violate bundle invariants.
class LoadError : public Error {
 public:
  using Error::Error;
};

// Source archive for the character-trajectories converter is missing or corrupt.
class ConversionError : public Error {
 public:
  using Error::Error;
};

// Bookkeeping disagreement detected by an audit (norm mismatch, budget overrun).
class ConsistencyError : public Error {
 public:
  using Error::Error;
};

// Filesystem or serialization failure.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace tsadv
