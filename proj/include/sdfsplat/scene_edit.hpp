// Copyright Contributors to the sdfsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "sdfsplat/checkpoint.hpp"
#include "sdfsplat/rasterizer.hpp"

namespace sdfsplat {

/// Rigid world-frame adjustment applied to an object after posing:
/// means map to R(quat) * x + trans, orientations pick up quat on the
/// left. Quaternions are (w, x, y, z) and stored unit length.
struct PoseOverride {
  Vec4<double> quat = Vec4<double>(1, 0, 0, 0);
  Vec3<double> trans = Vec3<double>::Zero();
};

/// One object in an edited scene: a trained checkpoint, an optional
/// rigid override (static, or one entry per frame), and a time offset
/// shifting when its motion plays back.
struct SceneObject {
  Checkpoint ckpt;
  bool has_override = false;
  std::vector<PoseOverride> overrides;  // one entry, or one per frame
  int time_offset = 0;

  /// Static overrides apply everywhere; per-frame lists clamp to the
  /// last entry so short lists extend naturally.
  const PoseOverride& override_at(int t) const;
};

/// Lightweight scene description: objects plus an optional static
/// background splat layer. Objects render independently of insertion
/// order: compositing order comes from depth sorting alone, with exact
/// depth ties between distinct splats falling back to concatenation
/// order (identical coincident splats composite the same either way).
struct SceneGraphLite {
  std::vector<SceneObject> objects;
  bool has_background = false;
  GaussianSet<double> background;
};

/// Reads a scene JSON file: an `objects` array of {checkpoint,
/// transform {quat, translation} or per-frame list, time_offset} plus an
/// optional `background` checkpoint path whose background layer is
/// used. Relative paths resolve against the scene file's directory.
/// Throws IoError naming the offending file or field.
SceneGraphLite load_scene_graph(const std::string& path);

/// Single-object scene backed by one checkpoint, carrying its
/// background layer if present. The render and edit commands share this
/// path, so an identity-override scene reproduces a plain checkpoint
/// render bit for bit.
SceneGraphLite scene_from_checkpoint(const Checkpoint& ck);

/// Poses every object at t (shifted by its time offset), applies
/// overrides, concatenates with the background layer, and rasterizes
/// once so depth sorting interleaves all sources. An empty scene yields
/// zero-filled buffers. Throws SpecError when an object's shifted time
/// falls outside its motion range.
RenderOutput<double> compose(const SceneGraphLite& scene, int t,
                             const CameraModel& cam,
                             const RigidTransform& extr,
                             const RasterizeConfig& rc);

}  // namespace sdfsplat
