#pragma once

#include <stdexcept>
#include <string>

namespace ctxseq {

// Base class for all library errors.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Mismatched or invalid tensor extents.
struct ShapeError : Error {
  explicit ShapeError(const std::string& msg) : Error("shape error: " + msg) {}
};

// Out-of-range token id or subscript.
struct IndexError : Error {
  explicit IndexError(const std::string& msg) : Error("index error: " + msg) {}
};

// k-max pooling with k larger than the sequence.
struct PoolError : Error {
  explicit PoolError(const std::string& msg) : Error("pool error: " + msg) {}
};

// Invalid configuration value (dropout rate, hyperparameter, ...).
struct ConfigError : Error {
  explicit ConfigError(const std::string& msg) : Error("config error: " + msg) {}
};

// API misuse: a precondition of an operation does not hold.
struct ContractError : Error {
  explicit ContractError(const std::string& msg) : Error("contract error: " + msg) {}
};

// Non-finite values detected while debug checks are enabled, or a
// training-time numeric abort.
struct NumericError : Error {
  explicit NumericError(const std::string& msg) : Error("numeric error: " + msg) {}
};

// Malformed corpus input (empty stream, bad JSONL line, ...).
struct CorpusError : Error {
  explicit CorpusError(const std::string& msg) : Error("corpus error: " + msg) {}
};

// Invalid synthetic-corpus specification.
struct SpecError : Error {
  explicit SpecError(const std::string& msg) : Error("spec error: " + msg) {}
};

// A test oracle could not be applied (e.g. non-deterministic objective).
struct OracleError : Error {
  explicit OracleError(const std::string& msg) : Error("oracle error: " + msg) {}
};

// Checkpoint file cannot be read or does not match the requested config.
struct LoadError : Error {
  explicit LoadError(const std::string& msg) : Error("load error: " + msg) {}
};

}  // namespace ctxseq
