// Copyright Contributors to the sdfsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <string>
#include <vector>

#include "sdfsplat/camera.hpp"
#include "sdfsplat/image.hpp"

namespace sdfsplat {

/// One captured view: image, binary mask, z-depth map, camera pose.
/// Depth is in meters, > 0 where valid; exactly 0 marks invalid pixels.
struct FrameRecord {
  int t_raw = 0;       // capture index as written on disk
  int time_index = 0;  // contiguous index among retained timesteps
  std::string camera_id;
  RigidTransform extr;      // world -> camera
  Image<uint8_t> image;     // H x W x 3
  Image<float> image_f;     // image converted to [0, 1]
  Image<uint8_t> mask;      // H x W x 1, values 0/1
  Image<float> depth;       // H x W x 1
  std::vector<Vec3d> lidar; // optional world-frame points

  bool mask_at(double u, double v) const {
    const int x = static_cast<int>(u + 0.5), y = static_cast<int>(v + 0.5);
    if (x < 0 || y < 0 || x >= mask.width || y >= mask.height) return false;
    return mask.at(y, x) != 0;
  }
  float depth_at(double u, double v) const {
    const int x = static_cast<int>(u + 0.5), y = static_cast<int>(v + 0.5);
    if (x < 0 || y < 0 || x >= depth.width || y >= depth.height) return 0.0f;
    return depth.at(y, x);
  }
};

struct TrackPoint {
  int t_raw = 0;
  float u = 0, v = 0;
  uint8_t visible = 0;
};

/// track id -> observations ordered by t. Tracks are expressed in the
/// dataset's first camera.
struct TrackTable {
  std::map<int, std::vector<TrackPoint>> tracks;
};

struct Dataset {
  std::map<std::string, CameraModel> cameras;
  std::vector<FrameRecord> frames;  // ordered by (time_index, camera_id)
  TrackTable tracks;
  int num_timesteps = 0;
  int canonical_t = 0;  // earliest time index with a non-empty mask
  std::vector<std::string> warnings;

  const CameraModel& camera(const std::string& id) const;
  std::string primary_camera_id() const;
  /// Indices into `frames` for one timestep.
  std::vector<int> frames_at(int time_index) const;
  /// The primary-camera record at a timestep, or nullptr.
  const FrameRecord* primary_frame(int time_index) const;
  /// Maps an on-disk capture index to a retained time index, or -1.
  int time_index_of_raw(int t_raw) const;
};

/// Reads a dataset directory (cameras.json, frames/, tracks.csv, lidar/).
/// Frames whose mask is empty are dropped with a warning. Throws IoError
/// naming the offending file or field.
Dataset load_dataset(const std::string& dir);

/// Writes a dataset directory in the exact on-disk formats load_dataset
/// reads. A load/save cycle of a generated fixture is bit-identical.
void save_dataset(const std::string& dir, const Dataset& ds);

}  // namespace sdfsplat
