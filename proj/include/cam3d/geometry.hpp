#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cam3d/types.hpp"

namespace cam3d {

// ---------------------------------------------------------------------------
// Reference state: a bird's-eye-view box with velocity.
// Layout is fixed: (x, y, z, w, l, h, theta, vx, vy).
//   - center (x, y, z) in meters, world or ego frame depending on context
//   - extents (w, l, h): w along local x, l along local y, h along z
//   - theta: yaw in (-pi, pi]
//   - (vx, vy): ground-plane velocity in m/s
// ---------------------------------------------------------------------------

inline constexpr int kStateDims = 9;

struct RefState {
  double x = 0.0, y = 0.0, z = 0.0;
  double w = 0.0, l = 0.0, h = 0.0;
  double theta = 0.0;
  double vx = 0.0, vy = 0.0;

  Vec3 center() const { return {x, y, z}; }

  Vec9 to_vector() const {
    Vec9 v;
    v << x, y, z, w, l, h, theta, vx, vy;
    return v;
  }

  static RefState from_vector(const Vec9& v) {
    RefState s;
    s.x = v[0]; s.y = v[1]; s.z = v[2];
    s.w = v[3]; s.l = v[4]; s.h = v[5];
    s.theta = wrap_angle(v[6]);
    s.vx = v[7]; s.vy = v[8];
    return s;
  }
};

inline bool is_rotation(const Mat3& r, double tol = kRotationTol) {
  const double ortho = (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff();
  return ortho <= tol && std::abs(r.determinant() - 1.0) <= tol;
}

// ---------------------------------------------------------------------------
// Rigid ego motion p' = R p + T (maps source-frame coords to target frame).
// ---------------------------------------------------------------------------

struct EgoMotion {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
};

inline EgoMotion make_ego(const Mat3& rotation, const Vec3& translation) {
  if (!is_rotation(rotation))
    throw std::invalid_argument("make_ego: rotation is not orthonormal with det +1");
  return {rotation, translation};
}

inline Vec3 apply_ego(const EgoMotion& e, const Vec3& p) {
  return e.rotation * p + e.translation;
}

// Composition: apply_ego(compose_ego(a, b), p) == apply_ego(a, apply_ego(b, p)).
inline EgoMotion compose_ego(const EgoMotion& a, const EgoMotion& b) {
  return {a.rotation * b.rotation, a.rotation * b.translation + a.translation};
}

inline EgoMotion invert_ego(const EgoMotion& e) {
  const Mat3 rt = e.rotation.transpose();
  return {rt, -(rt * e.translation)};
}

// ---------------------------------------------------------------------------
// Pinhole camera. The extrinsic stores world -> camera; both homogeneous
// transforms are cached once at construction.
// ---------------------------------------------------------------------------

struct CameraModel {
  int camera_id = 0;
  double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
  int width = 0, height = 0;
  Mat3 rotation = Mat3::Identity();   // world -> camera
  Vec3 translation = Vec3::Zero();    // world -> camera
  Mat4 world_to_cam = Mat4::Identity();
  Mat4 cam_to_world = Mat4::Identity();
};

inline CameraModel make_camera(int camera_id, double fx, double fy, double cx, double cy,
                               int width, int height, const Mat3& rotation,
                               const Vec3& translation) {
  if (!(fx > 0.0) || !(fy > 0.0))
    throw std::invalid_argument("make_camera: focal lengths must be positive");
  if (width <= 0 || height <= 0)
    throw std::invalid_argument("make_camera: image size must be positive");
  if (!is_rotation(rotation))
    throw std::invalid_argument("make_camera: extrinsic rotation is not orthonormal with det +1");
  CameraModel cam;
  cam.camera_id = camera_id;
  cam.fx = fx; cam.fy = fy; cam.cx = cx; cam.cy = cy;
  cam.width = width; cam.height = height;
  cam.rotation = rotation;
  cam.translation = translation;
  cam.world_to_cam.setIdentity();
  cam.world_to_cam.topLeftCorner<3, 3>() = rotation;
  cam.world_to_cam.topRightCorner<3, 1>() = translation;
  cam.cam_to_world.setIdentity();
  cam.cam_to_world.topLeftCorner<3, 3>() = rotation.transpose();
  cam.cam_to_world.topRightCorner<3, 1>() = -(rotation.transpose() * translation);
  return cam;
}

// Camera position in the world frame.
inline Vec3 camera_center(const CameraModel& cam) {
  return cam.cam_to_world.topRightCorner<3, 1>();
}

struct Projection {
  double u = 0.0, v = 0.0;
  double depth = 0.0;      // camera-frame z, reported even when not in front
  bool in_front = false;   // false: at or behind the image plane, (u, v) unset
};

inline Projection project_point(const CameraModel& cam, const Vec3& p) {
  const Eigen::Vector4d pc = cam.world_to_cam * p.homogeneous();
  Projection out;
  out.depth = pc.z();
  if (!(pc.z() > kMinDepth)) return out;
  out.u = cam.fx * pc.x() / pc.z() + cam.cx;
  out.v = cam.fy * pc.y() / pc.z() + cam.cy;
  out.in_front = true;
  return out;
}

inline bool inside_image(const CameraModel& cam, const Projection& p) {
  return p.in_front && p.u >= 0.0 && p.u < cam.width && p.v >= 0.0 && p.v < cam.height;
}

// ---------------------------------------------------------------------------
// 2D detections and lifting.
// ---------------------------------------------------------------------------

// Discrete depth hypothesis set; probabilities sum to 1.
struct DepthDistribution {
  std::vector<double> centers;  // meters
  std::vector<double> probs;
};

struct Detection2D {
  int camera_id = 0;
  double u = 0.0, v = 0.0;   // box center, pixels
  double w = 0.0, h = 0.0;   // box size, pixels
  double depth = 0.0;        // expected depth, meters
  double score = 0.0;        // in [0, 1]
  VecX z_sem;                // semantic feature vector
  std::optional<DepthDistribution> depth_dist;
};

inline void validate(const Detection2D& det) {
  if (!(det.w > 0.0) || !(det.h > 0.0))
    throw std::invalid_argument("Detection2D: box size must be positive");
  if (!(det.score >= 0.0 && det.score <= 1.0))
    throw std::invalid_argument("Detection2D: score must lie in [0, 1]");
  if (!(det.depth > 0.0))
    throw std::invalid_argument("Detection2D: depth must be positive");
  if (det.depth_dist) {
    const auto& dd = *det.depth_dist;
    if (dd.centers.size() != dd.probs.size() || dd.centers.empty())
      throw std::invalid_argument("Detection2D: depth distribution bins malformed");
    double sum = 0.0;
    for (double p : dd.probs) {
      if (p < 0.0) throw std::invalid_argument("Detection2D: negative depth probability");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw std::invalid_argument("Detection2D: depth probabilities must sum to 1");
  }
}

// Largest bin probability; 1 when no distribution is attached (a hard depth).
inline double max_bin_prob(const Detection2D& det) {
  if (!det.depth_dist) return 1.0;
  double m = 0.0;
  for (double p : det.depth_dist->probs) m = std::max(m, p);
  return m;
}

// Lift a 2D detection to a 3D reference state: intrinsic unprojection at the
// expected depth, then the inverse extrinsic. Metric extents come from the
// pixel box scaled by depth over focal length; the lifted length copies the
// width (a box is square in the ground plane until refined). Yaw and velocity
// start at zero.
inline RefState lift_detection(const CameraModel& cam, const Detection2D& det) {
  if (!(det.depth > 0.0))
    throw std::invalid_argument("lift_detection: depth must be positive");
  const double d = det.depth;
  const Vec3 pc((det.u - cam.cx) * d / cam.fx, (det.v - cam.cy) * d / cam.fy, d);
  const Eigen::Vector4d pw = cam.cam_to_world * pc.homogeneous();
  RefState s;
  s.x = pw.x();
  s.y = pw.y();
  s.z = pw.z();
  s.w = d * det.w / cam.fx;
  s.h = d * det.h / cam.fy;
  s.l = s.w;
  s.theta = 0.0;
  s.vx = 0.0;
  s.vy = 0.0;
  return s;
}

}  // namespace cam3d
