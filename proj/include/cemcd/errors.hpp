#pragma once

#include <stdexcept>
#include <string>

namespace cemcd {

class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Tensor/layer shape violations (indivisible inputs, mismatched operands).
class ShapeError : public Error {
public:
  using Error::Error;
};

// Invalid configuration values (bad tile size, crop larger than tile, ...).
class ConfigError : public Error {
public:
  using Error::Error;
};

// Dataset directory structure problems; the message names the offending id
// or directory.
class DatasetLayoutError : public Error {
public:
  using Error::Error;
};

// Unreadable or unwritable files.
class IoError : public Error {
public:
  using Error::Error;
};

// Synthetic generation could not satisfy its target after bounded retries.
class SynthesisError : public Error {
public:
  using Error::Error;
};

// Checkpoint container mismatches (magic, version, channel spec, shapes).
class CheckpointError : public Error {
public:
  using Error::Error;
};

// Training aborted on non-finite loss.
class DivergenceError : public Error {
public:
  using Error::Error;
};

// Metric report requested over zero evaluated pixels.
class EmptyEvaluationError : public Error {
public:
  using Error::Error;
};

}  // namespace cemcd
