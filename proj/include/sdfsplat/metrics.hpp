// Copyright Contributors to the sdfsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "sdfsplat/checkpoint.hpp"
#include "sdfsplat/dataset.hpp"
#include "sdfsplat/rasterizer.hpp"

namespace sdfsplat {

inline constexpr double kPsnrCap = 99.0;  // reported for identical images

/// 10 * log10(1 / MSE) over all pixels and channels of [0, 1] images,
/// capped at kPsnrCap when the images match exactly. Shapes must agree.
double psnr(const Image<double>& pred, const Image<double>& ref);

/// Same, restricted to pixels where the mask is non-zero. An empty mask
/// selects nothing to compare and scores the cap.
double psnr_masked(const Image<double>& pred, const Image<double>& ref,
                   const Image<uint8_t>& mask);

struct FrameMetrics {
  int t = 0;
  std::string camera_id;
  double psnr = 0, ssim = 0;
  double psnr_masked = 0, ssim_masked = 0;
};

/// Per-frame and mean image metrics for one evaluation split.
struct EvalReport {
  int holdout_every = 8;
  bool holdout_split = true;  // false evaluates the training split
  int frame_count = 0;
  std::vector<FrameMetrics> frames;
  double mean_psnr = 0, mean_ssim = 0;
  double mean_psnr_masked = 0, mean_ssim_masked = 0;
};

/// Renders the checkpoint (object plus background layer) at every frame
/// of the chosen split and scores it against the captured images.
/// Held-out frames are those with time_index % holdout_every == 0.
EvalReport evaluate(const Dataset& ds, const Checkpoint& ck,
                    int holdout_every, bool holdout_split,
                    const RasterizeConfig& rc);

/// Versioned JSON rendering of a report; identical reports serialize to
/// identical bytes.
std::string eval_report_to_json(const EvalReport& report);

}  // namespace sdfsplat
