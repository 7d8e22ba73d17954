// Copyright Contributors to the sdfsplat Project
// SPDX-License-Identifier: Apache-2.0
//
// Cross-guidance between the two representations: the distance field
// steers where splats are added and removed, and the splat render steers
// where rays sample the distance field.

#pragma once

#include <array>
#include <string>
#include <vector>

#include "sdfsplat/config.hpp"
#include "sdfsplat/dataset.hpp"
#include "sdfsplat/rasterizer.hpp"
#include "sdfsplat/sdf_model.hpp"

namespace sdfsplat {

/// Depth guidance rendered from the current splats: expected depth,
/// coverage alpha, and the front-most contributing splat per pixel. A
/// pixel guides sampling only when its alpha reaches 0.5.
struct GuidedDepth {
  int width = 0, height = 0;
  Image<double> depth;      // expected camera-z per pixel
  Image<double> alpha;      // coverage in [0, 1]
  std::vector<int> first;   // front-most splat index, -1 where empty

  bool has_guidance(int y, int x) const {
    return alpha.at(y, x) >= 0.5;
  }
  int first_splat(int y, int x) const {
    return first[static_cast<size_t>(y) * width + x];
  }
};

GuidedDepth guided_depth_map(const GaussianSet<double>& gs,
                             const MotionBasis<double>& mb, int t,
                             const CameraModel& cam,
                             const RigidTransform& extr,
                             const RasterizeConfig& rc);

/// Sampling interval for one ray. When not guided, [near, far] passes
/// through unchanged.
struct DepthInterval {
  double near = 0, far = 0;
  bool guided = false;
};

/// Interval centered on the splat depth with half-width gamma_samp ·
/// |sdf|, floored at `floor_width` across, then clipped to [near, far].
/// alpha < 0.5 falls back to the full range.
DepthInterval sample_range(double guided_depth, double abs_sdf, double alpha,
                           double near, double far, double floor_width,
                           const GuidanceConfig& cfg);

/// One structural change, serializable as a JSON line. Scores / sdf carry
/// the values the decision was made on so logs are auditable.
struct TrainEvent {
  int64_t iter = 0;
  std::string op;    // "config", "densify", "prune"
  int t = -1;        // timestep the operation was evaluated at
  std::array<int, 3> cell = {-1, -1, -1};
  std::vector<int64_t> ids;
  std::string cause;
  double sdf = 0.0;               // densify: value at the cell center
  std::vector<double> scores;     // prune: per-removed-id window scores
  std::string extra;              // config: preformatted JSON payload
};

std::string event_to_json(const TrainEvent& ev);

/// Adds splats in under-occupied cells of the canonical partition whose
/// centers lie within tau_s of the zero-level set at timestep t. Cells
/// covered by the splat depth render take 3 back-projected points; the
/// rest spawn k_nn samples from neighbor statistics. Returns the number
/// added (0 when nothing qualifies or the budget is exhausted).
int densify(GaussianSet<double>& gs, MotionBasis<double>& mb,
            const SdfModel<double>& sdf, const Dataset& ds, int t,
            const GuidanceConfig& cfg, const RasterizeConfig& rc,
            int64_t iter, int max_new, Rng& rng,
            std::vector<TrainEvent>* events);

/// Removes splats whose window-summed surface-proximity score falls below
/// tau_pr, never cutting the survivor set under 50. prune_window == 0 is
/// a no-op. Returns the number removed.
int prune(GaussianSet<double>& gs, MotionBasis<double>& mb,
          const SdfModel<double>& sdf, int t_now, const GuidanceConfig& cfg,
          int64_t iter, std::vector<TrainEvent>* events);

}  // namespace sdfsplat
