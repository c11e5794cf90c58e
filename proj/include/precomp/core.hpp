#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>

namespace precomp {

using Vec2 = Eigen::Vector2d;
using Vec4 = Eigen::Vector4d;

// Operational envelope of the reference machine.
inline constexpr double kWorkspaceHalf = 0.19;   // m, working area is [-0.19, 0.19]^2
inline constexpr double kMachineVmax = 1.5;      // m/s
inline constexpr double kMachineAmax = 40.0;     // m/s^2
inline constexpr double kRepeatabilityStd = 2e-6;  // m, run-to-run output std
inline constexpr double kSampleRate = 400.0;     // Hz, model/plant sample rate
inline constexpr double kSampleDt = 1.0 / kSampleRate;
inline constexpr double kDefaultTolerance = 20e-6;  // m, default tolerance tube

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Machine would reject the input (limit or workspace violation).
struct LimitError : Error {
  using Error::Error;
};

// Optimization problem reported infeasible.
struct InfeasibleError : Error {
  using Error::Error;
};

// Numerical failure: divergence, rank deficiency, undefined matrix log, ...
struct NumericalError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

inline bool in_workspace(const Vec2& p, double half = kWorkspaceHalf) {
  const double tol = 1e-12;
  return std::abs(p.x()) <= half + tol && std::abs(p.y()) <= half + tol;
}

}  // namespace precomp
