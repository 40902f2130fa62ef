#pragma once

#include <stdexcept>
#include <string>

namespace jscna {

/// Invalid configuration value or incompatible combination of settings.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Index or timestep outside its admissible range.
class RangeError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// Tensor shapes that must agree do not.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Numerical domain violation (division by zero gain, non-finite loss).
class NumericalError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Combined diffusion and channel noise exceeds what the schedule can absorb.
class ChannelTooNoisyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dataset directory missing, empty, or without decodable images.
class IngestionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Checkpoint file unreadable, wrong version, or incompatible with the config.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace jscna
