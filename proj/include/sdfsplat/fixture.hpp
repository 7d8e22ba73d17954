// Copyright Contributors to the sdfsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sdfsplat/camera.hpp"
#include "sdfsplat/dataset.hpp"

namespace sdfsplat {

/// Rigid motion of one fixture primitive over time (object -> world).
struct MotionSpec {
  enum class Type { kStatic, kTranslate, kOscillate, kSpin };
  Type type = Type::kStatic;
  Vec3d velocity = Vec3d::Zero();   // translate: meters per frame
  Vec3d axis = Vec3d(0, 1, 0);      // oscillate / spin
  double amplitude = 0;             // oscillate: meters
  double period = 16;               // oscillate: frames
  double deg_per_frame = 0;         // spin
  Vec3d pivot = Vec3d::Zero();      // spin

  RigidTransform pose_at(int t) const;  // object -> world
};

struct PrimitiveSpec {
  enum class Kind { kSphere, kBox, kCapsule };
  Kind kind = Kind::kSphere;
  Vec3d center = Vec3d::Zero();       // sphere / box center (local frame)
  double radius = 1.0;                // sphere / capsule
  Vec3d half_extents = Vec3d::Ones(); // box
  Vec3d p0 = Vec3d(0, -0.5, 0);       // capsule endpoints (local frame)
  Vec3d p1 = Vec3d(0, 0.5, 0);
  Vec3d albedo = Vec3d(0.8, 0.3, 0.2);
  bool checker = false;
  double checker_size = 0.25;
  Vec3d albedo2 = Vec3d(0.9, 0.85, 0.8);
  MotionSpec motion;

  /// Signed distance in the primitive's local frame.
  double sdf_local(const Vec3d& q) const;
};

struct BackgroundSpec {
  enum class Type { kNone, kEnvSphere };
  Type type = Type::kEnvSphere;
  double radius = 12.0;        // env sphere around the origin
  double checker_deg = 20.0;   // angular checker size
  Vec3d color_a = Vec3d(0.62, 0.64, 0.70);
  Vec3d color_b = Vec3d(0.45, 0.48, 0.55);
};

struct CameraSpecFx {
  std::string id = "cam0";
  double fov_deg = 50.0;  // horizontal
  enum class Path { kStatic, kOrbit };
  Path path = Path::kOrbit;
  Vec3d eye = Vec3d(0, 0.4, -4);    // static path
  Vec3d target = Vec3d::Zero();
  Vec3d orbit_center = Vec3d::Zero();
  double orbit_radius = 4.0;
  double orbit_height = 0.6;
  double orbit_start_deg = 0.0;
  double orbit_deg_per_frame = 6.0;

  RigidTransform extrinsics_at(int t) const;  // world -> camera
};

struct SceneSpec {
  std::string name = "fixture";
  int width = 128, height = 128;
  int frames = 24;
  uint64_t seed = 1;
  double depth_noise = 0.0;  // multiplicative: d * (1 + sigma * eps)
  double track_noise = 0.0;  // additive pixels
  int track_grid = 6;        // track seeding stride in pixels
  int lidar_per_frame = 0;
  std::vector<CameraSpecFx> cameras = {CameraSpecFx{}};
  BackgroundSpec background;
  std::vector<PrimitiveSpec> primitives;

  static SceneSpec from_json_file(const std::string& path);
  void validate() const;  // throws SpecError on degenerate values
};

/// Built-in scene specs used by tests and documented for the CLI:
/// sphere-static, sphere-rigid, articulated, two-camera, mini.
SceneSpec builtin_scene_spec(const std::string& name);

/// Analytic scene description written next to a generated fixture, used by
/// evaluation oracles.
struct GroundTruth {
  struct Prim {
    PrimitiveSpec spec;                 // geometry only; motion unused
    std::vector<RigidTransform> poses;  // object -> world per timestep
  };
  std::vector<Prim> primitives;
  struct CamPose {
    int t;
    std::string camera_id;
    RigidTransform extr;
  };
  std::vector<CamPose> camera_path;

  double sdf(const Vec3d& world, int t) const;
  /// First object hit along a unit-direction ray; returns ray length.
  std::optional<double> raycast(const Vec3d& origin, const Vec3d& dir,
                                int t) const;
};

GroundTruth load_ground_truth(const std::string& path);
void save_ground_truth(const std::string& path, const GroundTruth& gt);

/// Renders the fixture into `out_dir` (dataset layout plus
/// ground_truth.json) and returns the dataset as load_dataset sees it.
Dataset generate_fixture(const SceneSpec& spec, const std::string& out_dir);

}  // namespace sdfsplat
