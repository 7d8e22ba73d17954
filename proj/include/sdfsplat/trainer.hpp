// Copyright Contributors to the sdfsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "sdfsplat/checkpoint.hpp"
#include "sdfsplat/config.hpp"
#include "sdfsplat/dataset.hpp"
#include "sdfsplat/guidance.hpp"

namespace sdfsplat {

/// One Gaussian-phase step: raw loss terms plus the weighted total.
struct GaussLossRow {
  int64_t iter = 0;
  std::string phase;  // "init" or "joint"
  double img = 0, l1ssim = 0, depth = 0, mask = 0;
  double track = 0, rigid = 0, sparse = 0;
  double total = 0;
};

/// One SDF-phase step: raw loss terms plus the weighted total.
struct SdfLossRow {
  int64_t iter = 0;
  std::string phase;  // "init" or "joint"
  double rgb = 0, d = 0, sdf = 0, fs = 0, eik = 0, sm = 0;
  double total = 0;
};

struct TrainResult {
  Checkpoint ckpt;  // final state, or the last good one on abort
  bool aborted = false;
  std::string abort_reason;
  std::vector<TrainEvent> events;
  std::vector<GaussLossRow> gauss_rows;
  std::vector<SdfLossRow> sdf_rows;
};

/// Bounding box of all masked observations (depth back-projections and
/// LiDAR) across every frame, slightly padded. The distance field
/// normalizes query points by this box, so it must cover the object
/// wherever it travels.
Box3<double> compute_world_box(const Dataset& ds);

/// Full pipeline: scaffold and splat init, initialization training for
/// both representations, then the alternating schedule with densify,
/// prune, and guided sampling. A non-finite loss aborts and returns the
/// last state that completed a phase.
TrainResult train(const Dataset& ds, const TrainConfig& cfg);

void write_event_log(const std::string& path,
                     const std::vector<TrainEvent>& events);
void write_gauss_loss_csv(const std::string& path,
                          const std::vector<GaussLossRow>& rows);
void write_sdf_loss_csv(const std::string& path,
                        const std::vector<SdfLossRow>& rows);

}  // namespace sdfsplat
