#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace proxops {

/// Relative state in LVLH: position [m] (R-bar, V-bar, H-bar) followed by velocity [m/s].
using StateVec = Eigen::Matrix<double, 6, 1>;
/// Commanded acceleration [m/s^2].
using ControlVec = Eigen::Vector3d;

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using Mat63 = Eigen::Matrix<double, 6, 3>;
using Mat36 = Eigen::Matrix<double, 3, 6>;
using RowVec6 = Eigen::Matrix<double, 1, 6>;

enum class ErrorCode {
  InvalidMatrix,
  NoConvergence,
  NumericalFailure,
  Undefined,
  NotInitialized,
  EmptyBatch,
  ShapeError,
  CorruptModel,
  CorruptDataset,
  TrainingDiverged,
  Infeasible,
  HardInfeasible,
  Config,
  Io,
  MissingAsset,
};

const char* to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline StateVec make_state(double x1, double x2, double x3, double v1, double v2, double v3) {
  StateVec x;
  x << x1, x2, x3, v1, v2, v3;
  return x;
}

}  // namespace proxops
