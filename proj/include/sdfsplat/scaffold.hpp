// Copyright Contributors to the sdfsplat Project
// SPDX-License-Identifier: Apache-2.0
//
// Canonical object scaffold: masked depth pixels from a short window of
// frames, rigidly warped into the canonical timestep's world frame and
// fused into one colored point cloud. The scaffold seeds the Gaussian set
// and fixes the canonical box the SDF grid lives in.

#pragma once

#include <string>
#include <utility>
#include <vector>

#include "sdfsplat/dataset.hpp"
#include "sdfsplat/gaussian_set.hpp"
#include "sdfsplat/rng.hpp"

namespace sdfsplat {

struct Scaffold {
  struct Source {
    int t = 0;  // time index the pixel was lifted from
    std::string camera_id;
    float u = 0, v = 0;
  };

  MatXR<double> points;  // M x 3, canonical world frame
  MatXR<double> colors;  // M x 3, [0, 1]
  std::vector<Source> source;
  Box3<double> span;  // tight box grown 10% per side
  /// Estimated frame-to-canonical warps, one per non-canonical window
  /// frame that had enough shared tracks.
  std::vector<std::pair<int, RigidTransform>> warps;
  std::vector<std::string> warnings;

  int size() const { return static_cast<int>(points.rows()); }
};

struct ScaffoldConfig {
  int window = 5;           // timesteps fused, starting at canonical_t
  int finest_res = 128;     // finest SDF grid resolution, sets voxel size
  int min_points = 50;      // fewer after filtering is an error
  int max_points = 50000;
  int ransac_trials = 100;
  double ransac_voxels = 2.0;  // inlier threshold, in voxel widths
};

/// Least-squares rigid transform (no scale) with dst ~ R * src + t.
/// Rows are paired points; needs at least 3 non-degenerate pairs.
RigidTransform umeyama_rigid(const MatXR<double>& src,
                             const MatXR<double>& dst);

/// Robust rigid fit: 3-point trials, inliers within `threshold`, final
/// refit on the best inlier set. Returns false when no trial reaches 3
/// inliers.
bool fit_rigid_ransac(const MatXR<double>& src, const MatXR<double>& dst,
                      double threshold, int trials, Rng& rng,
                      RigidTransform* out, int* inliers = nullptr);

/// Fuses masked depth pixels (and LiDAR points inside the masks) from
/// `cfg.window` timesteps into the canonical frame. Throws SpecError when
/// fewer than `cfg.min_points` survive filtering.
Scaffold build_scaffold(const Dataset& ds, const ScaffoldConfig& cfg);

/// ASCII PLY export for inspection.
void save_scaffold_ply(const std::string& path, const Scaffold& s);

/// One Gaussian per scaffold point: means and colors copied, isotropic
/// scales from the mean distance to the 3 nearest neighbors, pre-sigmoid
/// opacity 0.1, identity rotations. The motion basis starts at zero with
/// lightly randomized coefficients so basis gradients are not stuck at a
/// symmetric saddle.
void init_gaussians(const Scaffold& s, int bases, int frames, Rng& rng,
                    GaussianSet<double>* gs, MotionBasis<double>* mb);

/// Depth at subpixel coordinates: bilinear when the whole 2x2
/// neighborhood is masked with valid depth, nearest-pixel otherwise.
/// Nearest-pixel lookup alone tilts warp fits measurably.
double track_depth(const FrameRecord& fr, double u, double v);

}  // namespace sdfsplat
