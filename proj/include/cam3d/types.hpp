#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <numbers>

namespace cam3d {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;
using Vec9 = Eigen::Matrix<double, 9, 1>;

inline constexpr double kPi = std::numbers::pi;

// Depth at or below this counts as behind the camera (not visible, not an error).
inline constexpr double kMinDepth = 1e-6;

// Orthonormality tolerance for rotation matrices accepted from outside.
inline constexpr double kRotationTol = 1e-9;

// Wrap an angle to (-pi, pi]. Values already in range are returned untouched
// so that adding an exact zero delta is a bitwise no-op.
inline double wrap_angle(double theta) {
  if (theta > -kPi && theta <= kPi) return theta;
  double r = std::fmod(theta + kPi, 2.0 * kPi);
  if (r <= 0.0) r += 2.0 * kPi;
  return r - kPi;
}

// Rotation about +z by `angle` (right-handed, x toward y).
inline Mat3 yaw_rotation(double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  Mat3 r;
  r << c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0;
  return r;
}

// Yaw component of a rotation matrix (heading of its rotated x axis).
inline double yaw_of(const Mat3& r) { return std::atan2(r(1, 0), r(0, 0)); }

}  // namespace cam3d
