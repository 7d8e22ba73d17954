// Copyright Contributors to the sdfsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <optional>
#include <string>

#include "sdfsplat/common.hpp"

namespace sdfsplat::testutil {

/// Fresh scratch directory under the system temp root.
inline std::string scratch_dir(const std::string& name) {
  namespace fs = std::filesystem;
  const fs::path p = fs::temp_directory_path() / "sdfsplat_tests" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

/// Relative error between an analytic and a numeric derivative, with a
/// floor so near-zero pairs compare absolutely.
inline double grad_rel_err(double analytic, double numeric) {
  const double denom =
      std::max({std::abs(analytic), std::abs(numeric), 1e-4});
  return std::abs(analytic - numeric) / denom;
}

/// Central finite difference of a scalar function with respect to one
/// in-place parameter slot.
template <class Fn, class S>
double fd_derivative(Fn&& f, S& slot, double h = 1e-5) {
  const S x0 = slot;
  slot = static_cast<S>(x0 + h);
  const double fp = f();
  slot = static_cast<S>(x0 - h);
  const double fm = f();
  slot = x0;
  return (fp - fm) / (2.0 * h);
}

/// Closed-form ray/sphere intersection (unit direction); nearest positive
/// root. Independent of the renderer's sphere-traced path.
inline std::optional<double> sphere_hit(const Vec3d& origin, const Vec3d& dir,
                                        const Vec3d& center, double radius) {
  const Vec3d oc = origin - center;
  const double b = oc.dot(dir);
  const double c = oc.squaredNorm() - radius * radius;
  const double disc = b * b - c;
  if (disc < 0) return std::nullopt;
  const double s = -b - std::sqrt(disc);
  if (s <= 0) return std::nullopt;
  return s;
}

/// Symmetric Chamfer distance between a vertex cloud and an analytic
/// sphere: exact point-to-surface distance one way, nearest-vertex
/// distance the other (evaluated at a Fibonacci spread of surface
/// samples, so the estimate is deterministic).
inline double chamfer_to_sphere(const MatX3<double>& verts,
                                const Vec3d& center, double radius,
                                int samples = 2000) {
  const int n = static_cast<int>(verts.rows());
  double to_sphere = 0;
  for (int i = 0; i < n; ++i)
    to_sphere +=
        std::abs((Vec3d(verts.row(i).transpose()) - center).norm() - radius);
  to_sphere /= std::max(n, 1);
  const double ga = M_PI * (3.0 - std::sqrt(5.0));
  double to_mesh = 0;
  for (int s = 0; s < samples; ++s) {
    const double z = 1.0 - 2.0 * (s + 0.5) / samples;
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double a = ga * s;
    const Vec3d p =
        center + radius * Vec3d(r * std::cos(a), r * std::sin(a), z);
    double best = 1e30;
    for (int i = 0; i < n; ++i)
      best = std::min(best,
                      (Vec3d(verts.row(i).transpose()) - p).squaredNorm());
    to_mesh += std::sqrt(best);
  }
  to_mesh /= std::max(samples, 1);
  return 0.5 * (to_sphere + to_mesh);
}

/// Slab-method ray/box intersection for an axis-aligned box posed rigidly.
inline std::optional<double> box_hit(const Vec3d& origin, const Vec3d& dir,
                                     const Vec3d& center,
                                     const Vec3d& half_extents,
                                     const Mat3d& r_ow = Mat3d::Identity(),
                                     const Vec3d& t_ow = Vec3d::Zero()) {
  // Transform the ray into the box's local frame.
  const Vec3d o = r_ow.transpose() * (origin - t_ow) - center;
  const Vec3d d = r_ow.transpose() * dir;
  double t0 = -1e30, t1 = 1e30;
  for (int k = 0; k < 3; ++k) {
    if (std::abs(d[k]) < 1e-12) {
      if (std::abs(o[k]) > half_extents[k]) return std::nullopt;
      continue;
    }
    double a = (-half_extents[k] - o[k]) / d[k];
    double b = (half_extents[k] - o[k]) / d[k];
    if (a > b) std::swap(a, b);
    t0 = std::max(t0, a);
    t1 = std::min(t1, b);
  }
  if (t0 > t1 || t0 <= 0) return std::nullopt;
  return t0;
}

}  // namespace sdfsplat::testutil
