#pragma once

#include <stdexcept>
#include <string>

namespace eegcvae {

// Invalid user-supplied configuration; the message names the offending field.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Invalid numeric parameter to a design or math routine.
struct ParameterError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Requested rank is not achievable from the data.
struct RankError : std::runtime_error {
  RankError(const std::string& what, std::size_t achievable)
      : std::runtime_error(what), achievable_dim(achievable) {}
  std::size_t achievable_dim;
};

struct InfeasibleError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed or truncated binary file.
struct CorruptFileError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct VersionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct KindError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Wraps a failure with the pipeline stage where it happened.
struct StageError : std::runtime_error {
  StageError(std::string stage_name, const std::string& cause)
      : std::runtime_error("[" + stage_name + "] " + cause), stage(std::move(stage_name)) {}
  std::string stage;
};

}  // namespace eegcvae
