// Copyright Contributors to the sdfsplat Project
// SPDX-License-Identifier: Apache-2.0

#include "sdfsplat/scene_edit.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>

namespace sdfsplat {

namespace fs = std::filesystem;
using nlohmann::json;

const PoseOverride& SceneObject::override_at(int t) const {
  static const PoseOverride kIdentity;
  if (!has_override || overrides.empty()) return kIdentity;
  const size_t i = std::min<size_t>(std::max(t, 0), overrides.size() - 1);
  return overrides[i];
}

namespace {

PoseOverride parse_override(const json& j, const std::string& where) {
  PoseOverride ov;
  if (!j.is_object())
    throw IoError(where + ": transform must be an object");
  if (j.contains("quat")) {
    const auto& q = j.at("quat");
    if (!q.is_array() || q.size() != 4)
      throw IoError(where + ": quat must have 4 elements (w, x, y, z)");
    for (int k = 0; k < 4; ++k) ov.quat[k] = q.at(k).get<double>();
    const double norm = ov.quat.norm();
    if (!(norm > 1e-9))
      throw IoError(where + ": quat has near-zero norm");
    ov.quat /= norm;
  }
  if (j.contains("translation")) {
    const auto& tr = j.at("translation");
    if (!tr.is_array() || tr.size() != 3)
      throw IoError(where + ": translation must have 3 elements");
    for (int k = 0; k < 3; ++k) ov.trans[k] = tr.at(k).get<double>();
  }
  return ov;
}

std::string resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path.string() : (base / path).string();
}

}  // namespace

SceneGraphLite load_scene_graph(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open scene file: " + path);
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    throw IoError("scene file " + path + ": " + e.what());
  }
  if (!j.is_object()) throw IoError("scene file " + path + ": not an object");
  const fs::path base = fs::path(path).parent_path();

  SceneGraphLite scene;
  try {
    if (j.contains("background")) {
      const std::string bg_path =
          resolve(base, j.at("background").get<std::string>());
      const Checkpoint bg = load_checkpoint(bg_path);
      if (!bg.has_background)
        throw IoError("scene background checkpoint has no background layer: " +
                      bg_path);
      scene.has_background = true;
      scene.background = bg.background;
    }
    for (const auto& jo : j.value("objects", json::array())) {
      if (!jo.is_object() || !jo.contains("checkpoint"))
        throw IoError("scene object entries need a 'checkpoint' path");
      SceneObject obj;
      obj.ckpt =
          load_checkpoint(resolve(base, jo.at("checkpoint").get<std::string>()));
      obj.time_offset = jo.value("time_offset", 0);
      if (jo.contains("transform")) {
        const auto& tr = jo.at("transform");
        obj.has_override = true;
        if (tr.is_array()) {
          if (tr.empty())
            throw IoError("scene file " + path +
                          ": per-frame transform list is empty");
          for (size_t i = 0; i < tr.size(); ++i)
            obj.overrides.push_back(parse_override(
                tr.at(i), path + " transform[" + std::to_string(i) + "]"));
        } else {
          obj.overrides.push_back(parse_override(tr, path + " transform"));
        }
      }
      scene.objects.push_back(std::move(obj));
    }
  } catch (const json::exception& e) {
    throw IoError("scene file " + path + ": " + e.what());
  }
  return scene;
}

SceneGraphLite scene_from_checkpoint(const Checkpoint& ck) {
  SceneGraphLite scene;
  SceneObject obj;
  obj.ckpt = ck;
  scene.objects.push_back(std::move(obj));
  if (ck.has_background) {
    scene.has_background = true;
    scene.background = ck.background;
  }
  return scene;
}

RenderOutput<double> compose(const SceneGraphLite& scene, int t,
                             const CameraModel& cam,
                             const RigidTransform& extr,
                             const RasterizeConfig& rc) {
  int total = 0;
  for (const SceneObject& obj : scene.objects) total += obj.ckpt.gs.size();
  if (scene.has_background) total += scene.background.size();

  MatX3<double> means(total, 3);
  MatX4<double> quats(total, 4);
  MatX3<double> log_scales(total, 3);
  VecX<double> opacities(total);
  MatX3<double> colors(total, 3);

  int row = 0;
  for (const SceneObject& obj : scene.objects) {
    const int n = obj.ckpt.gs.size();
    PosedGaussians<double> posed =
        pose_at(obj.ckpt.gs, obj.ckpt.mb, t - obj.time_offset);
    if (obj.has_override) {
      const PoseOverride& ov = obj.override_at(t);
      const Mat3<double> r = quat_to_rot(ov.quat);
      for (int i = 0; i < n; ++i) {
        means.row(row + i) =
            (r * posed.means.row(i).transpose() + ov.trans).transpose();
        quats.row(row + i) =
            quat_mul<double>(ov.quat, posed.quats.row(i).transpose())
                .transpose();
      }
    } else {
      means.middleRows(row, n) = posed.means;
      quats.middleRows(row, n) = posed.quats;
    }
    log_scales.middleRows(row, n) = obj.ckpt.gs.log_scales;
    opacities.segment(row, n) = obj.ckpt.gs.opacities;
    colors.middleRows(row, n) = obj.ckpt.gs.colors;
    row += n;
  }
  if (scene.has_background) {
    const int n = scene.background.size();
    means.middleRows(row, n) = scene.background.means;
    quats.middleRows(row, n) = scene.background.quats;
    log_scales.middleRows(row, n) = scene.background.log_scales;
    opacities.segment(row, n) = scene.background.opacities;
    colors.middleRows(row, n) = scene.background.colors;
    row += n;
  }

  return rasterize(means, quats, log_scales, opacities, colors, cam, extr, rc);
}

}  // namespace sdfsplat
