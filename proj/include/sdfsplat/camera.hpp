// Copyright Contributors to the sdfsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "sdfsplat/common.hpp"

namespace sdfsplat {

/// Pinhole intrinsics. Pixel (u, v) has u along +x (width) and v along +y
/// (height); the camera looks down +z in its own frame.
struct CameraModel {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;
};

/// World-to-camera transform: x_cam = R * x_world + t.
struct RigidTransform {
  Mat3d R = Mat3d::Identity();
  Vec3d t = Vec3d::Zero();

  Vec3d apply(const Vec3d& p) const { return R * p + t; }
  Vec3d to_world(const Vec3d& p_cam) const {
    return R.transpose() * (p_cam - t);
  }
  RigidTransform inverse() const {
    return RigidTransform{R.transpose(), -(R.transpose() * t)};
  }
  RigidTransform compose(const RigidTransform& inner) const {
    return RigidTransform{R * inner.R, R * inner.t + t};
  }
};

/// Camera-frame point for pixel (u, v) at z-depth `depth`.
inline Vec3d backproject(const CameraModel& cam, double u, double v,
                         double depth) {
  if (!(depth > 0.0))
    throw SpecError("backproject requires positive depth, got " +
                    std::to_string(depth));
  return Vec3d((u - cam.cx) / cam.fx * depth, (v - cam.cy) / cam.fy * depth,
               depth);
}

/// Pixel coordinates of a camera-frame point; valid only when z > 0.
inline bool project(const CameraModel& cam, const Vec3d& p_cam, double* u,
                    double* v) {
  if (!(p_cam.z() > 0.0)) return false;
  *u = cam.fx * p_cam.x() / p_cam.z() + cam.cx;
  *v = cam.fy * p_cam.y() / p_cam.z() + cam.cy;
  return true;
}

/// World-to-camera transform for a camera at `eye` looking at `target`.
/// World +y is up; image v grows downward.
inline RigidTransform look_at(const Vec3d& eye, const Vec3d& target,
                              const Vec3d& up = Vec3d(0, 1, 0)) {
  const Vec3d fwd = (target - eye).normalized();
  Vec3d right = fwd.cross(up).normalized();
  if (!right.allFinite() || right.norm() < 0.5)
    right = fwd.cross(Vec3d(1, 0, 0)).normalized();
  const Vec3d down = fwd.cross(right);
  Mat3d r_cw;
  r_cw.row(0) = right.transpose();
  r_cw.row(1) = down.transpose();
  r_cw.row(2) = fwd.transpose();
  return RigidTransform{r_cw, -(r_cw * eye)};
}

}  // namespace sdfsplat
