// Copyright Contributors to the sdfsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>

#include "sdfsplat/gaussian_set.hpp"
#include "sdfsplat/sdf_model.hpp"

namespace sdfsplat {

/// Run facts a consumer needs that are not model parameters.
struct CheckpointMeta {
  int canonical_t = 0;
  int num_timesteps = 0;
  uint64_t seed = 0;
  Box3<double> span;  // canonical-frame object box
};

/// Everything a trained object carries: splats plus motion model, the
/// distance field, and an optional static background layer.
struct Checkpoint {
  CheckpointMeta meta;
  GaussianSet<double> gs;
  MotionBasis<double> mb;
  bool has_sdf = false;
  SdfModel<double> sdf;
  bool has_background = false;
  GaussianSet<double> background;
};

/// Binary container: versioned header, then named sections (`meta`,
/// `gaussians`, optional `sdf` and `background`). Sections hold counts and
/// shape headers followed by flat little-endian 32-bit float arrays in
/// declared field order. Identical state writes identical bytes.
void save_checkpoint(const std::string& path, const Checkpoint& ck);

/// Rejects wrong magic or version and truncated sections with IoError.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace sdfsplat
