// Copyright Contributors to the sdfsplat Project
// SPDX-License-Identifier: Apache-2.0

#include "sdfsplat/fixture.hpp"

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "sdfsplat/rng.hpp"

namespace sdfsplat {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

constexpr double kPi = 3.14159265358979323846;

Vec3d vec3_of(const nlohmann::json& a, const Vec3d& fallback) {
  if (a.is_null()) return fallback;
  return Vec3d(a.at(0).get<double>(), a.at(1).get<double>(),
               a.at(2).get<double>());
}

nlohmann::json get_or_null(const nlohmann::json& j, const char* key) {
  return j.contains(key) ? j[key] : nlohmann::json();
}

ordered_json json_of(const Vec3d& v) {
  return ordered_json::array({v.x(), v.y(), v.z()});
}

ordered_json json_of(const Mat3d& m) {
  ordered_json a = ordered_json::array();
  for (int i = 0; i < 9; ++i) a.push_back(m(i / 3, i % 3));
  return a;
}

double segment_distance(const Vec3d& p, const Vec3d& a, const Vec3d& b) {
  const Vec3d ab = b - a;
  const double h =
      std::clamp(ab.dot(p - a) / ab.squaredNorm(), 0.0, 1.0);
  return (p - a - ab * h).norm();
}

}  // namespace

RigidTransform MotionSpec::pose_at(int t) const {
  RigidTransform tf;
  switch (type) {
    case Type::kStatic:
      break;
    case Type::kTranslate:
      tf.t = velocity * static_cast<double>(t);
      break;
    case Type::kOscillate:
      tf.t = axis.normalized() * amplitude *
             std::sin(2.0 * kPi * static_cast<double>(t) / period);
      break;
    case Type::kSpin: {
      const double ang = deg_per_frame * static_cast<double>(t) * kPi / 180.0;
      tf.R = Eigen::AngleAxisd(ang, axis.normalized()).toRotationMatrix();
      tf.t = pivot - tf.R * pivot;
      break;
    }
  }
  return tf;
}

double PrimitiveSpec::sdf_local(const Vec3d& q) const {
  switch (kind) {
    case Kind::kSphere:
      return (q - center).norm() - radius;
    case Kind::kBox: {
      const Vec3d d = (q - center).cwiseAbs() - half_extents;
      const Vec3d dpos = d.cwiseMax(0.0);
      return dpos.norm() + std::min(d.maxCoeff(), 0.0);
    }
    case Kind::kCapsule:
      return segment_distance(q, p0, p1) - radius;
  }
  return 0.0;
}

RigidTransform CameraSpecFx::extrinsics_at(int t) const {
  if (path == Path::kStatic) return look_at(eye, target);
  const double ang =
      (orbit_start_deg + orbit_deg_per_frame * static_cast<double>(t)) * kPi /
      180.0;
  const Vec3d e = orbit_center + Vec3d(orbit_radius * std::cos(ang),
                                       orbit_height,
                                       orbit_radius * std::sin(ang));
  return look_at(e, orbit_center);
}

SceneSpec SceneSpec::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw SpecError("malformed scene spec " + path + ": " + e.what());
  }
  SceneSpec s;
  s.name = j.value("name", s.name);
  s.width = j.value("width", s.width);
  s.height = j.value("height", s.height);
  s.frames = j.value("frames", s.frames);
  s.seed = j.value("seed", s.seed);
  s.depth_noise = j.value("depth_noise", s.depth_noise);
  s.track_noise = j.value("track_noise", s.track_noise);
  s.track_grid = j.value("track_grid", s.track_grid);
  s.lidar_per_frame = j.value("lidar_per_frame", s.lidar_per_frame);

  if (j.contains("cameras")) {
    s.cameras.clear();
    for (const nlohmann::json& c : j["cameras"]) {
      CameraSpecFx cs;
      cs.id = c.value("id", "cam" + std::to_string(s.cameras.size()));
      cs.fov_deg = c.value("fov_deg", cs.fov_deg);
      const std::string p = c.value("path", "orbit");
      if (p == "orbit")
        cs.path = CameraSpecFx::Path::kOrbit;
      else if (p == "static")
        cs.path = CameraSpecFx::Path::kStatic;
      else
        throw SpecError("unknown camera path type: " + p);
      cs.eye = vec3_of(get_or_null(c, "eye"), cs.eye);
      cs.target = vec3_of(get_or_null(c, "target"), cs.target);
      cs.orbit_center = vec3_of(get_or_null(c, "orbit_center"), cs.orbit_center);
      cs.orbit_radius = c.value("orbit_radius", cs.orbit_radius);
      cs.orbit_height = c.value("orbit_height", cs.orbit_height);
      cs.orbit_start_deg = c.value("orbit_start_deg", cs.orbit_start_deg);
      cs.orbit_deg_per_frame =
          c.value("orbit_deg_per_frame", cs.orbit_deg_per_frame);
      s.cameras.push_back(cs);
    }
  }

  if (j.contains("background")) {
    const nlohmann::json& b = j["background"];
    const std::string ty = b.value("type", "envsphere");
    if (ty == "envsphere")
      s.background.type = BackgroundSpec::Type::kEnvSphere;
    else if (ty == "none")
      s.background.type = BackgroundSpec::Type::kNone;
    else
      throw SpecError("unknown background type: " + ty);
    s.background.radius = b.value("radius", s.background.radius);
    s.background.checker_deg = b.value("checker_deg", s.background.checker_deg);
    s.background.color_a = vec3_of(get_or_null(b, "color_a"), s.background.color_a);
    s.background.color_b = vec3_of(get_or_null(b, "color_b"), s.background.color_b);
  }

  for (const nlohmann::json& p : j.value("primitives", nlohmann::json::array())) {
    PrimitiveSpec ps;
    const std::string kind = p.value("kind", "sphere");
    if (kind == "sphere")
      ps.kind = PrimitiveSpec::Kind::kSphere;
    else if (kind == "box")
      ps.kind = PrimitiveSpec::Kind::kBox;
    else if (kind == "capsule")
      ps.kind = PrimitiveSpec::Kind::kCapsule;
    else
      throw SpecError("unknown primitive kind: " + kind);
    ps.center = vec3_of(get_or_null(p, "center"), ps.center);
    ps.radius = p.value("radius", ps.radius);
    ps.half_extents = vec3_of(get_or_null(p, "half_extents"), ps.half_extents);
    ps.p0 = vec3_of(get_or_null(p, "p0"), ps.p0);
    ps.p1 = vec3_of(get_or_null(p, "p1"), ps.p1);
    ps.albedo = vec3_of(get_or_null(p, "albedo"), ps.albedo);
    ps.checker = p.value("checker", ps.checker);
    ps.checker_size = p.value("checker_size", ps.checker_size);
    ps.albedo2 = vec3_of(get_or_null(p, "albedo2"), ps.albedo2);
    if (p.contains("motion")) {
      const nlohmann::json& m = p["motion"];
      const std::string ty = m.value("type", "static");
      if (ty == "static")
        ps.motion.type = MotionSpec::Type::kStatic;
      else if (ty == "translate")
        ps.motion.type = MotionSpec::Type::kTranslate;
      else if (ty == "oscillate")
        ps.motion.type = MotionSpec::Type::kOscillate;
      else if (ty == "spin")
        ps.motion.type = MotionSpec::Type::kSpin;
      else
        throw SpecError("unknown motion type: " + ty);
      ps.motion.velocity = vec3_of(get_or_null(m, "velocity"), ps.motion.velocity);
      ps.motion.axis = vec3_of(get_or_null(m, "axis"), ps.motion.axis);
      ps.motion.amplitude = m.value("amplitude", ps.motion.amplitude);
      ps.motion.period = m.value("period", ps.motion.period);
      ps.motion.deg_per_frame = m.value("deg_per_frame", ps.motion.deg_per_frame);
      ps.motion.pivot = vec3_of(get_or_null(m, "pivot"), ps.motion.pivot);
    }
    s.primitives.push_back(ps);
  }
  s.validate();
  return s;
}

void SceneSpec::validate() const {
  if (frames < 1) throw SpecError("scene spec: frames must be >= 1");
  if (width < 16 || height < 16)
    throw SpecError("scene spec: resolution must be at least 16x16");
  if (track_grid < 1) throw SpecError("scene spec: track_grid must be >= 1");
  if (cameras.empty()) throw SpecError("scene spec: at least one camera");
  for (const CameraSpecFx& c : cameras) {
    if (!(c.fov_deg > 5.0 && c.fov_deg < 175.0))
      throw SpecError("scene spec: camera fov_deg out of range");
    if (c.path == CameraSpecFx::Path::kOrbit && !(c.orbit_radius > 0))
      throw SpecError("scene spec: orbit_radius must be positive");
  }
  if (primitives.empty())
    throw SpecError("scene spec: at least one primitive required");
  for (const PrimitiveSpec& p : primitives) {
    switch (p.kind) {
      case PrimitiveSpec::Kind::kSphere:
        if (!(p.radius > 0))
          throw SpecError("scene spec: sphere radius must be positive");
        break;
      case PrimitiveSpec::Kind::kBox:
        if (!(p.half_extents.minCoeff() > 0))
          throw SpecError("scene spec: box half_extents must be positive");
        break;
      case PrimitiveSpec::Kind::kCapsule:
        if (!(p.radius > 0) || (p.p1 - p.p0).norm() < 1e-12)
          throw SpecError(
              "scene spec: capsule needs positive radius and distinct endpoints");
        break;
    }
    if (p.checker && !(p.checker_size > 0))
      throw SpecError("scene spec: checker_size must be positive");
    if (p.motion.type == MotionSpec::Type::kOscillate && !(p.motion.period > 0))
      throw SpecError("scene spec: oscillation period must be positive");
  }
  if (background.type == BackgroundSpec::Type::kEnvSphere &&
      !(background.radius > 0))
    throw SpecError("scene spec: background radius must be positive");
}

SceneSpec builtin_scene_spec(const std::string& name) {
  SceneSpec s;
  s.name = name;
  if (name == "sphere-static") {
    PrimitiveSpec p;
    p.kind = PrimitiveSpec::Kind::kSphere;
    p.radius = 1.0;
    p.checker = true;
    p.checker_size = 0.35;
    p.albedo = Vec3d(0.75, 0.30, 0.22);
    p.albedo2 = Vec3d(0.88, 0.82, 0.55);
    s.primitives = {p};
    s.cameras[0].orbit_deg_per_frame = 360.0 / s.frames;
  } else if (name == "sphere-rigid" || name == "two-camera") {
    PrimitiveSpec p;
    p.kind = PrimitiveSpec::Kind::kSphere;
    p.radius = 1.0;
    p.center = Vec3d(-0.6, 0, 0);
    p.checker = true;
    p.checker_size = 0.35;
    p.albedo = Vec3d(0.72, 0.28, 0.24);
    p.albedo2 = Vec3d(0.86, 0.80, 0.52);
    p.motion.type = MotionSpec::Type::kTranslate;
    p.motion.velocity = Vec3d(0.05, 0, 0);
    s.primitives = {p};
    s.cameras[0].orbit_deg_per_frame = 5.0;
    if (name == "two-camera") {
      CameraSpecFx c2 = s.cameras[0];
      c2.id = "cam1";
      c2.orbit_start_deg = 40.0;
      c2.orbit_height = 1.2;
      s.cameras.push_back(c2);
    }
  } else if (name == "articulated") {
    PrimitiveSpec a;
    a.kind = PrimitiveSpec::Kind::kBox;
    a.center = Vec3d(-0.5, 0, 0);
    a.half_extents = Vec3d(0.3, 0.32, 0.3);
    a.checker = true;
    a.checker_size = 0.2;
    a.albedo = Vec3d(0.25, 0.45, 0.75);
    a.albedo2 = Vec3d(0.85, 0.85, 0.85);
    a.motion.type = MotionSpec::Type::kTranslate;
    a.motion.velocity = Vec3d(0.03, 0, 0);
    PrimitiveSpec b;
    b.kind = PrimitiveSpec::Kind::kCapsule;
    b.p0 = Vec3d(0.5, -0.38, 0);
    b.p1 = Vec3d(0.5, 0.38, 0);
    b.radius = 0.3;
    b.checker = true;
    b.checker_size = 0.2;
    b.albedo = Vec3d(0.78, 0.55, 0.2);
    b.albedo2 = Vec3d(0.4, 0.25, 0.12);
    b.motion.type = MotionSpec::Type::kOscillate;
    b.motion.axis = Vec3d(0, 1, 0);
    b.motion.amplitude = 0.3;
    b.motion.period = 12;
    s.primitives = {a, b};
    s.cameras[0].orbit_deg_per_frame = 7.0;
  } else if (name == "mini") {
    PrimitiveSpec p;
    p.kind = PrimitiveSpec::Kind::kSphere;
    p.radius = 0.8;
    p.checker = true;
    p.checker_size = 0.4;
    s.primitives = {p};
    s.width = 64;
    s.height = 64;
    s.frames = 4;
    s.track_grid = 4;
    s.cameras[0].orbit_deg_per_frame = 24.0;
  } else {
    throw SpecError(
        "unknown builtin scene '" + name +
        "'; expected one of: sphere-static, sphere-rigid, articulated, "
        "two-camera, mini");
  }
  s.validate();
  return s;
}

double GroundTruth::sdf(const Vec3d& world, int t) const {
  double best = std::numeric_limits<double>::max();
  for (const Prim& p : primitives) {
    const RigidTransform& tf = p.poses.at(t);
    const Vec3d local = tf.R.transpose() * (world - tf.t);
    best = std::min(best, p.spec.sdf_local(local));
  }
  return best;
}

std::optional<double> GroundTruth::raycast(const Vec3d& origin,
                                           const Vec3d& dir, int t) const {
  // Sphere tracing followed by bisection once the surface is bracketed.
  double s = 0.0;
  const double s_max = 100.0;
  double d = sdf(origin, t);
  for (int i = 0; i < 512 && d > 1e-4; ++i) {
    s += d;
    if (s > s_max) return std::nullopt;
    d = sdf(origin + dir * s, t);
  }
  if (d > 1e-4) return std::nullopt;
  double lo = s, hi = s;
  bool crossed = d <= 0.0;
  for (int i = 0; i < 4000 && !crossed; ++i) {
    lo = hi;
    hi += 2e-4;
    crossed = sdf(origin + dir * hi, t) <= 0.0;
  }
  if (!crossed) return std::nullopt;
  for (int i = 0; i < 80; ++i) {
    const double mid = 0.5 * (lo + hi);
    (sdf(origin + dir * mid, t) > 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

void save_ground_truth(const std::string& path, const GroundTruth& gt) {
  ordered_json j;
  j["version"] = 1;
  ordered_json prims = ordered_json::array();
  for (const GroundTruth::Prim& p : gt.primitives) {
    ordered_json e;
    ordered_json params;
    switch (p.spec.kind) {
      case PrimitiveSpec::Kind::kSphere:
        e["kind"] = "sphere";
        params["center"] = json_of(p.spec.center);
        params["radius"] = p.spec.radius;
        break;
      case PrimitiveSpec::Kind::kBox:
        e["kind"] = "box";
        params["center"] = json_of(p.spec.center);
        params["half_extents"] = json_of(p.spec.half_extents);
        break;
      case PrimitiveSpec::Kind::kCapsule:
        e["kind"] = "capsule";
        params["p0"] = json_of(p.spec.p0);
        params["p1"] = json_of(p.spec.p1);
        params["radius"] = p.spec.radius;
        break;
    }
    e["params"] = params;
    ordered_json poses = ordered_json::array();
    for (int t = 0; t < static_cast<int>(p.poses.size()); ++t) {
      ordered_json pj;
      pj["t"] = t;
      pj["rotation"] = json_of(p.poses[t].R);
      pj["translation"] = json_of(p.poses[t].t);
      poses.push_back(pj);
    }
    e["poses"] = poses;
    prims.push_back(e);
  }
  j["primitives"] = prims;
  ordered_json path_j = ordered_json::array();
  for (const GroundTruth::CamPose& c : gt.camera_path) {
    ordered_json pj;
    pj["t"] = c.t;
    pj["camera_id"] = c.camera_id;
    pj["rotation"] = json_of(c.extr.R);
    pj["translation"] = json_of(c.extr.t);
    path_j.push_back(pj);
  }
  j["camera_path"] = path_j;
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << j.dump(2) << "\n";
}

GroundTruth load_ground_truth(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed JSON in " + path + ": " + e.what());
  }
  GroundTruth gt;
  for (const nlohmann::json& e : j.at("primitives")) {
    GroundTruth::Prim p;
    const std::string kind = e.at("kind").get<std::string>();
    const nlohmann::json& params = e.at("params");
    if (kind == "sphere") {
      p.spec.kind = PrimitiveSpec::Kind::kSphere;
      p.spec.center = vec3_of(params.at("center"), Vec3d::Zero());
      p.spec.radius = params.at("radius").get<double>();
    } else if (kind == "box") {
      p.spec.kind = PrimitiveSpec::Kind::kBox;
      p.spec.center = vec3_of(params.at("center"), Vec3d::Zero());
      p.spec.half_extents = vec3_of(params.at("half_extents"), Vec3d::Ones());
    } else if (kind == "capsule") {
      p.spec.kind = PrimitiveSpec::Kind::kCapsule;
      p.spec.p0 = vec3_of(params.at("p0"), Vec3d::Zero());
      p.spec.p1 = vec3_of(params.at("p1"), Vec3d::Zero());
      p.spec.radius = params.at("radius").get<double>();
    } else {
      throw IoError(path + ": unknown primitive kind " + kind);
    }
    for (const nlohmann::json& pj : e.at("poses")) {
      RigidTransform tf;
      const nlohmann::json& r = pj.at("rotation");
      for (int i = 0; i < 9; ++i) tf.R(i / 3, i % 3) = r.at(i).get<double>();
      tf.t = vec3_of(pj.at("translation"), Vec3d::Zero());
      p.poses.push_back(tf);
    }
    gt.primitives.push_back(p);
  }
  for (const nlohmann::json& pj : j.at("camera_path")) {
    GroundTruth::CamPose c;
    c.t = pj.at("t").get<int>();
    c.camera_id = pj.at("camera_id").get<std::string>();
    const nlohmann::json& r = pj.at("rotation");
    for (int i = 0; i < 9; ++i) c.extr.R(i / 3, i % 3) = r.at(i).get<double>();
    c.extr.t = vec3_of(pj.at("translation"), Vec3d::Zero());
    gt.camera_path.push_back(c);
  }
  return gt;
}

namespace {

/// Fixture scene frozen at one timestep.
struct PosedScene {
  const SceneSpec* spec;
  std::vector<RigidTransform> poses;     // object -> world
  std::vector<RigidTransform> inv_poses; // world -> object

  PosedScene(const SceneSpec& s, int t) : spec(&s) {
    for (const PrimitiveSpec& p : s.primitives) {
      poses.push_back(p.motion.pose_at(t));
      inv_poses.push_back(poses.back().inverse());
    }
  }

  double sdf(const Vec3d& world, int* which = nullptr) const {
    double best = std::numeric_limits<double>::max();
    for (size_t i = 0; i < poses.size(); ++i) {
      const double d =
          spec->primitives[i].sdf_local(inv_poses[i].apply(world));
      if (d < best) {
        best = d;
        if (which) *which = static_cast<int>(i);
      }
    }
    return best;
  }

  std::optional<double> raycast(const Vec3d& origin, const Vec3d& dir,
                                int* which = nullptr) const {
    double s = 0.0;
    double d = sdf(origin);
    for (int i = 0; i < 512 && d > 1e-4; ++i) {
      s += d;
      if (s > 100.0) return std::nullopt;
      d = sdf(origin + dir * s);
    }
    if (d > 1e-4) return std::nullopt;
    double lo = s, hi = s;
    bool crossed = d <= 0.0;
    for (int i = 0; i < 4000 && !crossed; ++i) {
      lo = hi;
      hi += 2e-4;
      crossed = sdf(origin + dir * hi) <= 0.0;
    }
    if (!crossed) return std::nullopt;
    for (int i = 0; i < 80; ++i) {
      const double mid = 0.5 * (lo + hi);
      (sdf(origin + dir * mid) > 0.0 ? lo : hi) = mid;
    }
    const double s_hit = 0.5 * (lo + hi);
    if (which) sdf(origin + dir * s_hit, which);
    return s_hit;
  }

  Vec3d normal(const Vec3d& p) const {
    const double h = 1e-6;
    Vec3d n;
    for (int k = 0; k < 3; ++k) {
      Vec3d e = Vec3d::Zero();
      e[k] = h;
      n[k] = sdf(p + e) - sdf(p - e);
    }
    const double len = n.norm();
    return len > 0 ? Vec3d(n / len) : Vec3d(0, 0, 1);
  }

  Vec3d shade(int prim, const Vec3d& world) const {
    const PrimitiveSpec& p = spec->primitives[prim];
    Vec3d albedo = p.albedo;
    if (p.checker) {
      const Vec3d q = inv_poses[prim].apply(world) / p.checker_size;
      const int parity = (static_cast<int>(std::floor(q.x())) +
                          static_cast<int>(std::floor(q.y())) +
                          static_cast<int>(std::floor(q.z()))) &
                         1;
      if (parity) albedo = p.albedo2;
    }
    const Vec3d light = Vec3d(0.4, 0.8, 0.45).normalized();
    const double lambert = std::max(0.0, normal(world).dot(light));
    return albedo * (0.35 + 0.65 * lambert);
  }
};

Vec3d background_color(const BackgroundSpec& bg, const Vec3d& hit_dir) {
  if (bg.type == BackgroundSpec::Type::kNone) return bg.color_a;
  const double size = bg.checker_deg * kPi / 180.0;
  const double theta = std::atan2(hit_dir.z(), hit_dir.x());
  const double phi = std::asin(std::clamp(hit_dir.y(), -1.0, 1.0));
  const int parity = (static_cast<int>(std::floor(theta / size)) +
                      static_cast<int>(std::floor(phi / size))) &
                     1;
  return parity ? bg.color_b : bg.color_a;
}

/// Positive root of |origin + s * dir| = radius, if any.
std::optional<double> envsphere_hit(const Vec3d& origin, const Vec3d& dir,
                                    double radius) {
  const double b = origin.dot(dir);
  const double c = origin.squaredNorm() - radius * radius;
  const double disc = b * b - c;
  if (disc < 0) return std::nullopt;
  const double s = -b + std::sqrt(disc);
  if (s <= 0) return std::nullopt;
  return s;
}

}  // namespace

Dataset generate_fixture(const SceneSpec& spec, const std::string& out_dir) {
  spec.validate();
  fs::create_directories(out_dir);
  Rng root(spec.seed);

  // Intrinsics from the horizontal field of view; square pixels; pixel (x, y)
  // samples the ray through continuous coordinates (x, y).
  std::vector<CameraModel> models;
  for (const CameraSpecFx& c : spec.cameras) {
    CameraModel m;
    m.width = spec.width;
    m.height = spec.height;
    m.fx = 0.5 * spec.width / std::tan(0.5 * c.fov_deg * kPi / 180.0);
    m.fy = m.fx;
    m.cx = 0.5 * (spec.width - 1);
    m.cy = 0.5 * (spec.height - 1);
    models.push_back(m);
  }

  GroundTruth gt;
  for (const PrimitiveSpec& p : spec.primitives) {
    GroundTruth::Prim gp;
    gp.spec = p;
    for (int t = 0; t < spec.frames; ++t) gp.poses.push_back(p.motion.pose_at(t));
    gt.primitives.push_back(gp);
  }

  Dataset ds;
  for (size_t ci = 0; ci < spec.cameras.size(); ++ci)
    ds.cameras[spec.cameras[ci].id] = models[ci];

  for (int t = 0; t < spec.frames; ++t) {
    const PosedScene scene(spec, t);
    for (size_t ci = 0; ci < spec.cameras.size(); ++ci) {
      const CameraSpecFx& cspec = spec.cameras[ci];
      const CameraModel& cam = models[ci];
      const RigidTransform extr = cspec.extrinsics_at(t);
      gt.camera_path.push_back({t, cspec.id, extr});

      FrameRecord fr;
      fr.t_raw = t;
      fr.camera_id = cspec.id;
      fr.extr = extr;
      Image<float> img_f(cam.height, cam.width, 3);
      fr.mask = Image<uint8_t>(cam.height, cam.width, 1, 0);
      fr.depth = Image<float>(cam.height, cam.width, 1, 0.0f);

      const Vec3d origin = extr.to_world(Vec3d::Zero());
      Rng noise = root.fork(1 + static_cast<uint64_t>(t) * 97 + ci);
      for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
          const Vec3d dir_cam =
              Vec3d((x - cam.cx) / cam.fx, (y - cam.cy) / cam.fy, 1.0)
                  .normalized();
          const Vec3d dir = extr.R.transpose() * dir_cam;
          int prim = -1;
          Vec3d color;
          double depth = 0.0;
          if (auto s = scene.raycast(origin, dir, &prim)) {
            const Vec3d hit = origin + dir * *s;
            color = scene.shade(prim, hit);
            depth = *s * dir_cam.z();
            fr.mask.at(y, x) = 1;
          } else if (spec.background.type == BackgroundSpec::Type::kEnvSphere &&
                     envsphere_hit(origin, dir, spec.background.radius)) {
            const double s =
                *envsphere_hit(origin, dir, spec.background.radius);
            const Vec3d hit = origin + dir * s;
            color = background_color(spec.background, hit.normalized());
            depth = s * dir_cam.z();
          } else {
            color = spec.background.color_a;
            depth = 0.0;
          }
          if (depth > 0.0 && spec.depth_noise > 0.0)
            depth = std::max(1e-4, depth * (1.0 + spec.depth_noise * noise.normal()));
          for (int k = 0; k < 3; ++k)
            img_f.at(y, x, k) = static_cast<float>(color[k]);
          fr.depth.at(y, x) = static_cast<float>(depth);
        }
      }
      fr.image = quantize_u8(img_f);
      fr.image_f = to_float(fr.image);
      ds.frames.push_back(std::move(fr));
    }
  }

  // Tracks: seeded on a pixel grid of the primary camera's canonical mask,
  // attached to the hit primitive, then reprojected into every frame with an
  // occlusion test.
  struct Seed {
    int prim;
    Vec3d local;
  };
  std::vector<Seed> seeds;
  {
    const PosedScene scene0(spec, 0);
    const CameraModel& cam = models[0];
    const RigidTransform extr0 = spec.cameras[0].extrinsics_at(0);
    const Vec3d origin = extr0.to_world(Vec3d::Zero());
    for (int y = 0; y < cam.height; y += spec.track_grid) {
      for (int x = 0; x < cam.width; x += spec.track_grid) {
        const Vec3d dir_cam =
            Vec3d((x - cam.cx) / cam.fx, (y - cam.cy) / cam.fy, 1.0)
                .normalized();
        const Vec3d dir = extr0.R.transpose() * dir_cam;
        int prim = -1;
        if (auto s = scene0.raycast(origin, dir, &prim)) {
          const Vec3d hit = origin + dir * *s;
          seeds.push_back({prim, scene0.inv_poses[prim].apply(hit)});
        }
      }
    }
  }
  Rng track_rng = root.fork(1000003);
  for (int t = 0; t < spec.frames; ++t) {
    const PosedScene scene(spec, t);
    const CameraModel& cam = models[0];
    const RigidTransform extr = spec.cameras[0].extrinsics_at(t);
    const Vec3d origin = extr.to_world(Vec3d::Zero());
    for (size_t k = 0; k < seeds.size(); ++k) {
      const Vec3d world = scene.poses[seeds[k].prim].apply(seeds[k].local);
      const Vec3d p_cam = extr.apply(world);
      TrackPoint tp;
      tp.t_raw = t;
      double u = 0, v = 0;
      bool vis = project(cam, p_cam, &u, &v);
      if (vis) {
        const double dist = (world - origin).norm();
        const Vec3d dir = (world - origin) / dist;
        auto s = scene.raycast(origin, dir);
        vis = s && std::abs(*s - dist) < 5e-3;
      }
      if (vis && spec.track_noise > 0.0) {
        u += spec.track_noise * track_rng.normal();
        v += spec.track_noise * track_rng.normal();
      }
      if (vis && (u < 0 || v < 0 || u > cam.width - 1 || v > cam.height - 1))
        vis = false;
      tp.u = static_cast<float>(u);
      tp.v = static_cast<float>(v);
      tp.visible = vis ? 1 : 0;
      ds.tracks.tracks[static_cast<int>(k)].push_back(tp);
    }
  }

  // Optional lidar: world-frame surface samples through random masked pixels
  // of the primary camera.
  if (spec.lidar_per_frame > 0) {
    for (int t = 0; t < spec.frames; ++t) {
      FrameRecord* prim_frame = nullptr;
      for (FrameRecord& fr : ds.frames)
        if (fr.t_raw == t && fr.camera_id == spec.cameras[0].id)
          prim_frame = &fr;
      if (!prim_frame) continue;
      std::vector<std::pair<int, int>> mask_px;
      for (int y = 0; y < prim_frame->mask.height; ++y)
        for (int x = 0; x < prim_frame->mask.width; ++x)
          if (prim_frame->mask.at(y, x)) mask_px.push_back({x, y});
      if (mask_px.empty()) continue;
      Rng lrng = root.fork(2000003 + static_cast<uint64_t>(t));
      const PosedScene scene(spec, t);
      const CameraModel& cam = models[0];
      const RigidTransform extr = spec.cameras[0].extrinsics_at(t);
      const Vec3d origin = extr.to_world(Vec3d::Zero());
      for (int i = 0; i < spec.lidar_per_frame; ++i) {
        const auto [x, y] = mask_px[lrng.uniform_int(mask_px.size())];
        const Vec3d dir_cam =
            Vec3d((x - cam.cx) / cam.fx, (y - cam.cy) / cam.fy, 1.0)
                .normalized();
        const Vec3d dir = extr.R.transpose() * dir_cam;
        if (auto s = scene.raycast(origin, dir)) {
          double range = *s;
          if (spec.depth_noise > 0.0)
            range = std::max(1e-4, range * (1.0 + spec.depth_noise * lrng.normal()));
          prim_frame->lidar.push_back(origin + dir * range);
        }
      }
    }
  }

  save_dataset(out_dir, ds);
  save_ground_truth(out_dir + "/ground_truth.json", gt);
  return load_dataset(out_dir);
}

}  // namespace sdfsplat
