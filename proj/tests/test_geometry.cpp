#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "cam3d/files.hpp"
#include "cam3d/geometry.hpp"
#include "cam3d/rng.hpp"
#include "test_util.hpp"

using Catch::Approx;
using namespace cam3d;

TEST_CASE("wrap_angle maps into (-pi, pi]") {
  // Values already in range pass through bit-identically.
  for (double a : {0.0, 1.0, -1.0, kPi, -3.14159, 0.5 * kPi}) {
    REQUIRE(wrap_angle(a) == a);
  }
  // -pi is excluded from the interval and maps to +pi.
  REQUIRE(wrap_angle(-kPi) == Approx(kPi).margin(1e-15));
  REQUIRE(wrap_angle(3.0 * kPi) == Approx(kPi).margin(1e-12));
  REQUIRE(wrap_angle(2.5 * kPi) == Approx(0.5 * kPi).margin(1e-12));
  REQUIRE(wrap_angle(-1.5 * kPi) == Approx(0.5 * kPi).margin(1e-12));
  REQUIRE(wrap_angle(2.0 * kPi) == Approx(0.0).margin(1e-12));

  std::mt19937_64 gen(1);
  for (int i = 0; i < 1000; ++i) {
    const double a = uniform_in(gen, -50.0, 50.0);
    const double w = wrap_angle(a);
    REQUIRE(w > -kPi);
    REQUIRE(w <= kPi);
    // Wrapping preserves the angle modulo a full turn.
    REQUIRE(std::remainder(a - w, 2.0 * kPi) == Approx(0.0).margin(1e-9));
    // Idempotent, and bit-stable on the second pass.
    REQUIRE(wrap_angle(w) == w);
  }
}

TEST_CASE("yaw rotations") {
  std::mt19937_64 gen(2);
  for (int i = 0; i < 100; ++i) {
    const double a = uniform_in(gen, -3.0, 3.0);
    const Mat3 r = yaw_rotation(a);
    REQUIRE(is_rotation(r));
    REQUIRE(yaw_of(r) == Approx(a).margin(1e-12));
  }
  // A quarter turn sends +x to +y.
  const Vec3 p = yaw_rotation(0.5 * kPi) * Vec3(1.0, 0.0, 0.0);
  REQUIRE(p.x() == Approx(0.0).margin(1e-15));
  REQUIRE(p.y() == Approx(1.0).margin(1e-15));
  REQUIRE(p.z() == 0.0);
}

TEST_CASE("RefState vector round trip") {
  std::mt19937_64 gen(3);
  const RefState s = test_util::random_state(gen);
  const RefState back = RefState::from_vector(s.to_vector());
  REQUIRE(back.to_vector() == s.to_vector());
  // from_vector re-wraps the yaw slot.
  Vec9 v = s.to_vector();
  v[6] = 3.0 * kPi;
  REQUIRE(RefState::from_vector(v).theta == Approx(kPi).margin(1e-12));
}

TEST_CASE("ego motion algebra") {
  std::mt19937_64 gen(4);

  SECTION("make_ego rejects non-rotations") {
    Mat3 bad = Mat3::Identity();
    bad(0, 0) = 2.0;
    REQUIRE_THROWS_AS(make_ego(bad, Vec3::Zero()), std::invalid_argument);
    Mat3 reflect = Mat3::Identity();
    reflect(2, 2) = -1.0;  // det -1
    REQUIRE_THROWS_AS(make_ego(reflect, Vec3::Zero()), std::invalid_argument);
  }

  SECTION("apply and compose agree with sequential application") {
    for (int i = 0; i < 100; ++i) {
      const EgoMotion a = make_ego(yaw_rotation(uniform_in(gen, -3.0, 3.0)),
                                   Vec3(uniform_in(gen, -5, 5), uniform_in(gen, -5, 5), 0.0));
      const EgoMotion b = make_ego(yaw_rotation(uniform_in(gen, -3.0, 3.0)),
                                   Vec3(uniform_in(gen, -5, 5), uniform_in(gen, -5, 5), 0.0));
      const Vec3 p(uniform_in(gen, -10, 10), uniform_in(gen, -10, 10), uniform_in(gen, -2, 2));
      const Vec3 once = apply_ego(compose_ego(a, b), p);
      const Vec3 twice = apply_ego(a, apply_ego(b, p));
      REQUIRE((once - twice).norm() == Approx(0.0).margin(1e-12));
    }
  }

  SECTION("invert undoes the motion") {
    const EgoMotion e = make_ego(yaw_rotation(0.7), Vec3(3.0, -1.0, 0.5));
    const EgoMotion id = compose_ego(e, invert_ego(e));
    REQUIRE((id.rotation - Mat3::Identity()).cwiseAbs().maxCoeff() <= 1e-14);
    REQUIRE(id.translation.norm() <= 1e-14);
    const Vec3 p(1.0, 2.0, 3.0);
    REQUIRE((apply_ego(invert_ego(e), apply_ego(e, p)) - p).norm() <= 1e-13);
  }
}

TEST_CASE("camera construction and projection") {
  SECTION("validation") {
    REQUIRE_THROWS_AS(make_camera(0, 0.0, 500, 0, 0, 10, 10, Mat3::Identity(), Vec3::Zero()),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(make_camera(0, 500, -1.0, 0, 0, 10, 10, Mat3::Identity(), Vec3::Zero()),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(make_camera(0, 500, 500, 0, 0, 0, 10, Mat3::Identity(), Vec3::Zero()),
                      std::invalid_argument);
    Mat3 bad = Mat3::Identity();
    bad(0, 1) = 0.5;
    REQUIRE_THROWS_AS(make_camera(0, 500, 500, 0, 0, 10, 10, bad, Vec3::Zero()),
                      std::invalid_argument);
  }

  SECTION("the cached homogeneous transforms are inverses") {
    const Mat3 r = yaw_rotation(0.4) * Eigen::AngleAxisd(0.2, Vec3::UnitX()).toRotationMatrix();
    const CameraModel cam = make_camera(3, 400, 410, 352, 128, 704, 256, r, Vec3(1, 2, 3));
    REQUIRE(((cam.world_to_cam * cam.cam_to_world) - Mat4::Identity()).cwiseAbs().maxCoeff() <=
            1e-14);
    // The optical center maps to the camera-frame origin.
    const Vec3 c = camera_center(cam);
    REQUIRE((cam.rotation * c + cam.translation).norm() <= 1e-12);
  }

  SECTION("pinhole arithmetic on an axis-aligned camera") {
    const CameraModel cam = test_util::axis_camera(500.0, 500.0, 320.0, 240.0, 704, 256);
    // z = 4 keeps every quotient exact in binary.
    const Projection p = project_point(cam, Vec3(1.0, -0.5, 4.0));
    REQUIRE(p.in_front);
    REQUIRE(p.depth == 4.0);
    REQUIRE(p.u == 320.0 + 500.0 * 0.25);
    REQUIRE(p.v == 240.0 - 500.0 * 0.125);
  }

  SECTION("points at or behind the image plane are flagged, not errors") {
    const CameraModel cam = test_util::axis_camera();
    REQUIRE_FALSE(project_point(cam, Vec3(0, 0, -1.0)).in_front);
    REQUIRE_FALSE(project_point(cam, Vec3(0, 0, 0.0)).in_front);
    REQUIRE_FALSE(project_point(cam, Vec3(0, 0, 1e-7)).in_front);  // inside the depth guard
    REQUIRE(project_point(cam, Vec3(0, 0, 1e-3)).in_front);
    REQUIRE(project_point(cam, Vec3(0, 0, -1.0)).depth == -1.0);
  }

  SECTION("inside_image uses half-open pixel bounds") {
    const CameraModel cam = test_util::axis_camera(500, 500, 352, 128, 704, 256);
    Projection p;
    p.in_front = true;
    p.u = 0.0;
    p.v = 0.0;
    REQUIRE(inside_image(cam, p));
    p.u = 703.999;
    p.v = 255.999;
    REQUIRE(inside_image(cam, p));
    p.u = 704.0;
    REQUIRE_FALSE(inside_image(cam, p));
    p.u = -0.001;
    REQUIRE_FALSE(inside_image(cam, p));
    p.u = 100.0;
    p.v = 256.0;
    REQUIRE_FALSE(inside_image(cam, p));
    p.in_front = false;
    p.u = 100.0;
    p.v = 100.0;
    REQUIRE_FALSE(inside_image(cam, p));
  }
}

TEST_CASE("detection validation") {
  Detection2D det;
  det.camera_id = 0;
  det.u = 10;
  det.v = 10;
  det.w = 20;
  det.h = 10;
  det.depth = 5.0;
  det.score = 0.5;
  REQUIRE_NOTHROW(validate(det));
  REQUIRE(max_bin_prob(det) == 1.0);

  Detection2D bad = det;
  bad.w = 0.0;
  REQUIRE_THROWS_AS(validate(bad), std::invalid_argument);
  bad = det;
  bad.score = 1.2;
  REQUIRE_THROWS_AS(validate(bad), std::invalid_argument);
  bad = det;
  bad.depth = -1.0;
  REQUIRE_THROWS_AS(validate(bad), std::invalid_argument);
  bad = det;
  bad.depth_dist = DepthDistribution{{4.0, 5.0}, {0.5, 0.4}};  // sums to 0.9
  REQUIRE_THROWS_AS(validate(bad), std::invalid_argument);
  bad.depth_dist = DepthDistribution{{4.0, 5.0}, {0.5, -0.5}};
  REQUIRE_THROWS_AS(validate(bad), std::invalid_argument);
  bad.depth_dist = DepthDistribution{{4.0}, {0.5, 0.5}};  // length mismatch
  REQUIRE_THROWS_AS(validate(bad), std::invalid_argument);

  det.depth_dist = DepthDistribution{{4.5, 5.0, 5.5}, {0.1, 0.8, 0.1}};
  REQUIRE_NOTHROW(validate(det));
  REQUIRE(max_bin_prob(det) == 0.8);
}

TEST_CASE("lifting a detection") {
  SECTION("axis-aligned example with exact arithmetic") {
    const CameraModel cam = test_util::axis_camera(100.0, 100.0, 0.0, 0.0, 704, 256);
    Detection2D det;
    det.u = 0.0;
    det.v = 0.0;
    det.w = 2.0;
    det.h = 2.0;
    det.depth = 5.0;
    det.score = 1.0;
    const RefState s = lift_detection(cam, det);
    REQUIRE(s.x == 0.0);
    REQUIRE(s.y == 0.0);
    REQUIRE(s.z == 5.0);
    REQUIRE(s.w == 0.1);   // 5 * 2 / 100
    REQUIRE(s.h == 0.1);
    REQUIRE(s.l == s.w);   // lifted length copies the width
    REQUIRE(s.theta == 0.0);
    REQUIRE(s.vx == 0.0);
    REQUIRE(s.vy == 0.0);
  }

  SECTION("metric size scales with depth over focal length") {
    const CameraModel cam = test_util::axis_camera(500.0, 500.0, 0.0, 0.0, 704, 256);
    Detection2D det;
    det.u = 10.0;
    det.v = 4.0;
    det.w = 100.0;
    det.h = 50.0;
    det.depth = 10.0;
    REQUIRE(lift_detection(cam, det).w == 2.0);  // 10 * 100 / 500
    // Doubling the depth doubles every metric extent exactly.
    Detection2D far = det;
    far.depth = 2.0 * det.depth;
    const RefState near_s = lift_detection(cam, det);
    const RefState far_s = lift_detection(cam, far);
    REQUIRE(far_s.w == 2.0 * near_s.w);
    REQUIRE(far_s.h == 2.0 * near_s.h);
  }

  SECTION("non-positive depth throws") {
    const CameraModel cam = test_util::axis_camera();
    Detection2D det;
    det.w = 10;
    det.h = 10;
    det.depth = 0.0;
    REQUIRE_THROWS_AS(lift_detection(cam, det), std::invalid_argument);
  }

  SECTION("lift then project recovers the detection center") {
    std::mt19937_64 gen(5);
    for (int i = 0; i < 200; ++i) {
      const Mat3 r = (Eigen::AngleAxisd(uniform_in(gen, -kPi, kPi), Vec3::UnitZ()) *
                      Eigen::AngleAxisd(uniform_in(gen, -0.5, 0.5), Vec3::UnitY()) *
                      Eigen::AngleAxisd(uniform_in(gen, -0.5, 0.5), Vec3::UnitX()))
                         .toRotationMatrix();
      const CameraModel cam =
          make_camera(i, uniform_in(gen, 200, 800), uniform_in(gen, 200, 800),
                      uniform_in(gen, 300, 400), uniform_in(gen, 110, 150), 704, 256, r,
                      Vec3(uniform_in(gen, -5, 5), uniform_in(gen, -5, 5), uniform_in(gen, -5, 5)));
      Detection2D det;
      det.camera_id = i;
      det.u = uniform_in(gen, 0, 704);
      det.v = uniform_in(gen, 0, 256);
      det.w = uniform_in(gen, 5, 200);
      det.h = uniform_in(gen, 5, 100);
      det.depth = uniform_in(gen, 1.0, 60.0);
      const RefState s = lift_detection(cam, det);
      const Projection p = project_point(cam, s.center());
      REQUIRE(p.in_front);
      REQUIRE(std::abs(p.u - det.u) <= 1e-9 * std::max(1.0, std::abs(det.u)));
      REQUIRE(std::abs(p.v - det.v) <= 1e-9 * std::max(1.0, std::abs(det.v)));
      REQUIRE(std::abs(p.depth - det.depth) <= 1e-9 * det.depth);
    }
  }
}

TEST_CASE("rig JSON round trip") {
  std::vector<CameraModel> rig;
  rig.push_back(make_camera(0, 400, 405, 352, 128, 704, 256, yaw_rotation(0.3), Vec3(1, 2, 3)));
  rig.push_back(make_camera(7, 350, 355, 300, 120, 704, 256, yaw_rotation(-1.1), Vec3(-1, 0, 2)));

  const std::string path = test_util::temp_path("rig.json");
  save_rig(rig, path);
  const std::vector<CameraModel> back = load_rig(path);
  REQUIRE(back.size() == rig.size());
  for (size_t i = 0; i < rig.size(); ++i) {
    REQUIRE(back[i].camera_id == rig[i].camera_id);
    REQUIRE(back[i].fx == rig[i].fx);
    REQUIRE(back[i].fy == rig[i].fy);
    REQUIRE(back[i].cx == rig[i].cx);
    REQUIRE(back[i].cy == rig[i].cy);
    REQUIRE(back[i].width == rig[i].width);
    REQUIRE(back[i].height == rig[i].height);
    REQUIRE(back[i].rotation == rig[i].rotation);
    REQUIRE(back[i].translation == rig[i].translation);
  }
  std::filesystem::remove(path);

  SECTION("malformed input is an I/O error") {
    const std::string bad = test_util::temp_path("rig_bad.json");
    std::ofstream(bad) << "{ not json";
    REQUIRE_THROWS_AS(load_rig(bad), std::runtime_error);
    std::filesystem::remove(bad);
    REQUIRE_THROWS_AS(load_rig(test_util::temp_path("missing_rig.json")), std::runtime_error);
  }
}

TEST_CASE("detection JSON round trip") {
  Detection2D det;
  det.camera_id = 2;
  det.u = 123.5;
  det.v = 87.25;
  det.w = 40.0;
  det.h = 22.0;
  det.depth = 17.5;
  det.score = 0.875;
  det.z_sem = VecX::Zero(4);
  det.z_sem[1] = 1.0;
  det.depth_dist = DepthDistribution{{15.75, 17.5, 19.25}, {0.1, 0.8, 0.1}};

  const std::string path = test_util::temp_path("dets.json");
  save_detections({det}, path);
  const std::vector<Detection2D> back = load_detections(path);
  REQUIRE(back.size() == 1);
  REQUIRE(back[0].camera_id == det.camera_id);
  REQUIRE(back[0].u == det.u);
  REQUIRE(back[0].v == det.v);
  REQUIRE(back[0].depth == det.depth);
  REQUIRE(back[0].score == det.score);
  REQUIRE(back[0].z_sem == det.z_sem);
  REQUIRE(back[0].depth_dist.has_value());
  REQUIRE(back[0].depth_dist->centers == det.depth_dist->centers);
  REQUIRE(back[0].depth_dist->probs == det.depth_dist->probs);
  std::filesystem::remove(path);
}
