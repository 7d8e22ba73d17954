// Copyright Contributors to the sdfsplat Project
// SPDX-License-Identifier: Apache-2.0

#include "sdfsplat/dataset.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

namespace sdfsplat {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

std::string frame_stem(int t_raw, const std::string& cam_id) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%05d_%s", t_raw, cam_id.c_str());
  return buf;
}

nlohmann::json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed JSON in " + path + ": " + e.what());
  }
  return j;
}

void check_rotation(const Mat3d& r, const std::string& where) {
  const double ortho = (r * r.transpose() - Mat3d::Identity()).cwiseAbs().maxCoeff();
  if (ortho > 1e-6 || r.determinant() < 0.0)
    throw IoError(where + ": rotation is not orthonormal (err " +
                  std::to_string(ortho) + ")");
}

Mat3d mat_from_json(const nlohmann::json& a, const std::string& where) {
  if (!a.is_array() || a.size() != 9)
    throw IoError(where + ": rotation must be a 9-element row-major array");
  Mat3d r;
  for (int i = 0; i < 9; ++i) r(i / 3, i % 3) = a[i].get<double>();
  return r;
}

Vec3d vec_from_json(const nlohmann::json& a, const std::string& where) {
  if (!a.is_array() || a.size() != 3)
    throw IoError(where + ": translation must be a 3-element array");
  return Vec3d(a[0].get<double>(), a[1].get<double>(), a[2].get<double>());
}

}  // namespace

const CameraModel& Dataset::camera(const std::string& id) const {
  auto it = cameras.find(id);
  if (it == cameras.end()) throw IoError("unknown camera id: " + id);
  return it->second;
}

std::string Dataset::primary_camera_id() const {
  if (cameras.empty()) throw IoError("dataset has no cameras");
  return cameras.begin()->first;
}

std::vector<int> Dataset::frames_at(int time_index) const {
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(frames.size()); ++i)
    if (frames[i].time_index == time_index) out.push_back(i);
  return out;
}

const FrameRecord* Dataset::primary_frame(int time_index) const {
  const std::string prim = primary_camera_id();
  for (const FrameRecord& f : frames)
    if (f.time_index == time_index && f.camera_id == prim) return &f;
  return nullptr;
}

int Dataset::time_index_of_raw(int t_raw) const {
  for (const FrameRecord& f : frames)
    if (f.t_raw == t_raw) return f.time_index;
  return -1;
}

Dataset load_dataset(const std::string& dir) {
  Dataset ds;
  const std::string cam_path = dir + "/cameras.json";
  nlohmann::json j = load_json(cam_path);

  if (!j.contains("cameras") || !j.contains("frames"))
    throw IoError(cam_path + ": missing 'cameras' or 'frames'");
  for (auto it = j["cameras"].begin(); it != j["cameras"].end(); ++it) {
    const nlohmann::json& c = it.value();
    CameraModel cam;
    for (const char* k : {"fx", "fy", "cx", "cy", "width", "height"})
      if (!c.contains(k))
        throw IoError(cam_path + ": camera " + it.key() + " missing " + k);
    cam.fx = c["fx"].get<double>();
    cam.fy = c["fy"].get<double>();
    cam.cx = c["cx"].get<double>();
    cam.cy = c["cy"].get<double>();
    cam.width = c["width"].get<int>();
    cam.height = c["height"].get<int>();
    if (!(cam.fx > 0) || !(cam.fy > 0) || cam.width <= 0 || cam.height <= 0)
      throw IoError(cam_path + ": camera " + it.key() +
                    " has non-positive focal length or size");
    ds.cameras[it.key()] = cam;
  }
  if (ds.cameras.empty()) throw IoError(cam_path + ": no cameras defined");

  struct RawFrame {
    int t_raw;
    std::string cam_id;
    RigidTransform extr;
  };
  std::vector<RawFrame> raw;
  std::set<std::pair<int, std::string>> seen;
  for (const nlohmann::json& f : j["frames"]) {
    RawFrame rf;
    rf.t_raw = f.at("t").get<int>();
    rf.cam_id = f.at("camera_id").get<std::string>();
    const std::string where =
        cam_path + " frame t=" + std::to_string(rf.t_raw) + " " + rf.cam_id;
    if (!ds.cameras.count(rf.cam_id)) throw IoError(where + ": unknown camera");
    if (!seen.insert({rf.t_raw, rf.cam_id}).second)
      throw IoError(where + ": duplicate (t, camera) pair");
    rf.extr.R = mat_from_json(f.at("rotation"), where);
    rf.extr.t = vec_from_json(f.at("translation"), where);
    check_rotation(rf.extr.R, where);
    raw.push_back(rf);
  }
  std::sort(raw.begin(), raw.end(), [](const RawFrame& a, const RawFrame& b) {
    return std::tie(a.t_raw, a.cam_id) < std::tie(b.t_raw, b.cam_id);
  });

  // Load per-frame payloads; a timestep is retained only if at least one of
  // its masks is non-empty.
  std::map<int, std::vector<FrameRecord>> by_t;
  for (const RawFrame& rf : raw) {
    const CameraModel& cam = ds.cameras[rf.cam_id];
    const std::string stem = dir + "/frames/" + frame_stem(rf.t_raw, rf.cam_id);
    FrameRecord fr;
    fr.t_raw = rf.t_raw;
    fr.camera_id = rf.cam_id;
    fr.extr = rf.extr;
    fr.image = load_png_rgb8(stem + "_image.png");
    fr.mask = load_png_mask1(stem + "_mask.png");
    fr.depth = load_f32(stem + "_depth.f32", kDepthMagic);
    const char* field = nullptr;
    if (fr.image.height != cam.height || fr.image.width != cam.width)
      field = "image";
    else if (fr.mask.height != cam.height || fr.mask.width != cam.width)
      field = "mask";
    else if (fr.depth.height != cam.height || fr.depth.width != cam.width)
      field = "depth";
    if (field)
      throw IoError("frame t=" + std::to_string(rf.t_raw) + " " + rf.cam_id +
                    ": " + field + " resolution does not match camera");
    for (float d : fr.depth.data)
      if (!(d >= 0.0f) || !std::isfinite(d))
        throw IoError("frame t=" + std::to_string(rf.t_raw) + " " + rf.cam_id +
                      ": depth contains negative or non-finite values");
    for (uint8_t m : fr.mask.data)
      if (m > 1)
        throw IoError("frame t=" + std::to_string(rf.t_raw) + " " + rf.cam_id +
                      ": mask is not binary");
    fr.image_f = to_float(fr.image);
    const std::string lidar_path =
        dir + "/lidar/" + frame_stem(rf.t_raw, rf.cam_id).substr(0, 5) + ".f32";
    if (fr.camera_id == ds.cameras.begin()->first && fs::exists(lidar_path)) {
      Image<float> pts = load_f32(lidar_path, kLidarMagic);
      if (pts.width != 3)
        throw IoError(lidar_path + ": expected Nx3 point array");
      for (int i = 0; i < pts.height; ++i)
        fr.lidar.emplace_back(pts.at(i, 0), pts.at(i, 1), pts.at(i, 2));
    }
    by_t[rf.t_raw].push_back(std::move(fr));
  }

  int next_index = 0;
  for (auto& [t_raw, recs] : by_t) {
    bool any_mask = false;
    for (const FrameRecord& fr : recs)
      for (uint8_t m : fr.mask.data) any_mask |= (m != 0);
    if (!any_mask) {
      ds.warnings.push_back("frame t=" + std::to_string(t_raw) +
                            " has an empty mask and was excluded");
      continue;
    }
    for (FrameRecord& fr : recs) {
      fr.time_index = next_index;
      ds.frames.push_back(std::move(fr));
    }
    ++next_index;
  }
  ds.num_timesteps = next_index;
  if (ds.num_timesteps == 0)
    throw IoError(dir + ": no frames with a non-empty mask");
  ds.canonical_t = 0;

  // Tracks: CSV columns track_id,t,u,v,visible; coordinates live in the
  // first camera.
  const std::string tracks_path = dir + "/tracks.csv";
  std::ifstream tin(tracks_path);
  if (!tin) throw IoError("cannot open file: " + tracks_path);
  const CameraModel& prim = ds.cameras.begin()->second;
  std::string line;
  int lineno = 0;
  std::set<std::pair<int, int>> track_seen;
  while (std::getline(tin, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    if (lineno == 1 && line.rfind("track_id", 0) == 0) continue;
    int id, t, visible;
    float u, v;
    if (std::sscanf(line.c_str(), "%d,%d,%f,%f,%d", &id, &t, &u, &v,
                    &visible) != 5)
      throw IoError(tracks_path + ":" + std::to_string(lineno) +
                    ": expected 'track_id,t,u,v,visible'");
    if (!track_seen.insert({id, t}).second)
      throw IoError(tracks_path + ":" + std::to_string(lineno) +
                    ": duplicate entry for track " + std::to_string(id) +
                    " at t=" + std::to_string(t));
    if (visible &&
        (u < 0 || v < 0 || u >= prim.width || v >= prim.height))
      throw IoError(tracks_path + ":" + std::to_string(lineno) +
                    ": visible track point out of image bounds");
    ds.tracks.tracks[id].push_back(
        {t, u, v, static_cast<uint8_t>(visible != 0)});
  }
  for (auto& [id, pts] : ds.tracks.tracks)
    std::sort(pts.begin(), pts.end(),
              [](const TrackPoint& a, const TrackPoint& b) {
                return a.t_raw < b.t_raw;
              });
  return ds;
}

void save_dataset(const std::string& dir, const Dataset& ds) {
  fs::create_directories(dir + "/frames");
  ordered_json j;
  j["version"] = 1;
  ordered_json cams = ordered_json::object();
  for (const auto& [id, cam] : ds.cameras) {
    cams[id] = {{"fx", cam.fx},     {"fy", cam.fy},
                {"cx", cam.cx},     {"cy", cam.cy},
                {"width", cam.width}, {"height", cam.height}};
  }
  j["cameras"] = cams;
  ordered_json frames = ordered_json::array();
  for (const FrameRecord& fr : ds.frames) {
    ordered_json f;
    f["t"] = fr.t_raw;
    f["camera_id"] = fr.camera_id;
    std::vector<double> rot(9);
    for (int i = 0; i < 9; ++i) rot[i] = fr.extr.R(i / 3, i % 3);
    f["rotation"] = rot;
    f["translation"] = {fr.extr.t.x(), fr.extr.t.y(), fr.extr.t.z()};
    frames.push_back(f);
  }
  j["frames"] = frames;
  std::ofstream out(dir + "/cameras.json");
  if (!out) throw IoError("cannot write " + dir + "/cameras.json");
  out << j.dump(2) << "\n";

  bool any_lidar = false;
  for (const FrameRecord& fr : ds.frames) {
    const std::string stem = dir + "/frames/" + frame_stem(fr.t_raw, fr.camera_id);
    save_png_rgb8(stem + "_image.png", fr.image);
    save_png_mask1(stem + "_mask.png", fr.mask);
    save_f32(stem + "_depth.f32", kDepthMagic, fr.depth);
    any_lidar |= !fr.lidar.empty();
  }
  if (any_lidar) {
    fs::create_directories(dir + "/lidar");
    for (const FrameRecord& fr : ds.frames) {
      if (fr.lidar.empty()) continue;
      Image<float> pts(static_cast<int>(fr.lidar.size()), 3, 1);
      for (int i = 0; i < pts.height; ++i)
        for (int k = 0; k < 3; ++k)
          pts.at(i, k) = static_cast<float>(fr.lidar[i][k]);
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%05d.f32", fr.t_raw);
      save_f32(dir + "/lidar/" + buf, kLidarMagic, pts);
    }
  }

  std::ofstream tout(dir + "/tracks.csv");
  if (!tout) throw IoError("cannot write " + dir + "/tracks.csv");
  tout << "track_id,t,u,v,visible\n";
  char buf[128];
  for (const auto& [id, pts] : ds.tracks.tracks) {
    for (const TrackPoint& p : pts) {
      std::snprintf(buf, sizeof(buf), "%d,%d,%.9g,%.9g,%d\n", id, p.t_raw,
                    p.u, p.v, p.visible ? 1 : 0);
      tout << buf;
    }
  }
}

}  // namespace sdfsplat
