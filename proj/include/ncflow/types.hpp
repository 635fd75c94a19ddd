#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace ncflow {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Raised when an experiment configuration is malformed or inconsistent.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Raised when a dataset, file artifact, or precondition on the data is broken.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Raised when a training run cannot continue (non-finite loss, bad inputs).
struct FlowError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Raised when a verification step cannot be completed.
struct VerificationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Process exit codes, one per pipeline stage, so CI can tell an engineering
// failure from a scientific one.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitFlow = 4;
inline constexpr int kExitVerification = 5;

}  // namespace ncflow
