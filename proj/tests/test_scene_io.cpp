// Copyright Contributors to the sdfsplat Project
// SPDX-License-Identifier: Apache-2.0
//
// Dataset formats, fixture generation, and the analytic oracles that pin
// their expected values: closed-form ray intersections and reprojection.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <fstream>

#include "sdfsplat/dataset.hpp"
#include "sdfsplat/fixture.hpp"
#include "test_util.hpp"

using namespace sdfsplat;
namespace tu = sdfsplat::testutil;

TEST_CASE("backproject maps pixels to camera-frame points") {
  CameraModel cam{100, 100, 50, 50, 101, 101};
  const Vec3d p = backproject(cam, 150, 50, 2.0);
  CHECK(p.x() == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(p.y() == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(p.z() == doctest::Approx(2.0).epsilon(1e-12));
  CHECK_THROWS_AS(backproject(cam, 10, 10, 0.0), SpecError);
  CHECK_THROWS_AS(backproject(cam, 10, 10, -1.0), SpecError);
}

TEST_CASE("project and backproject round-trip") {
  CameraModel cam{80, 90, 31.5, 35.5, 64, 72};
  const Vec3d p(0.3, -0.2, 1.7);
  double u = 0, v = 0;
  REQUIRE(project(cam, p, &u, &v));
  const Vec3d q = backproject(cam, u, v, p.z());
  CHECK((p - q).norm() < 1e-12);
  CHECK_FALSE(project(cam, Vec3d(0, 0, -1), &u, &v));
}

TEST_CASE("noise-free fixture depth matches closed-form sphere intersection") {
  SceneSpec spec = builtin_scene_spec("mini");
  spec.frames = 2;
  const std::string dir = tu::scratch_dir("fixture_depth_oracle");
  Dataset ds = generate_fixture(spec, dir);
  REQUIRE(ds.frames.size() == 2);

  const CameraModel& cam = ds.camera("cam0");
  int checked = 0;
  for (const FrameRecord& fr : ds.frames) {
    const Vec3d origin = fr.extr.to_world(Vec3d::Zero());
    for (int y = 0; y < cam.height; y += 3) {
      for (int x = 0; x < cam.width; x += 3) {
        const Vec3d dir_cam =
            Vec3d((x - cam.cx) / cam.fx, (y - cam.cy) / cam.fy, 1.0)
                .normalized();
        const Vec3d dir = fr.extr.R.transpose() * dir_cam;
        auto s = tu::sphere_hit(origin, dir, Vec3d::Zero(), 0.8);
        if (!s) continue;
        // Skip grazing rays where the oracle itself is ill-conditioned.
        const Vec3d hit = origin + dir * *s;
        if (std::abs(dir.dot(hit.normalized())) < 0.2) continue;
        REQUIRE(fr.mask.at(y, x) == 1);
        const double expected = *s * dir_cam.z();
        CHECK(std::abs(fr.depth.at(y, x) - expected) < 1e-6);
        ++checked;
      }
    }
  }
  CHECK(checked > 100);
}

TEST_CASE("translating sphere depth follows the analytic center distance") {
  SceneSpec spec = builtin_scene_spec("sphere-rigid");
  spec.frames = 8;
  spec.width = spec.height = 64;
  const std::string dir = tu::scratch_dir("fixture_translate");
  Dataset ds = generate_fixture(spec, dir);
  const CameraModel& cam = ds.camera("cam0");
  const Vec3d center0(-0.6, 0, 0);
  const Vec3d vel(0.05, 0, 0);
  int checked = 0;
  for (const FrameRecord& fr : ds.frames) {
    const Vec3d center = center0 + vel * fr.t_raw;
    const Vec3d p_cam = fr.extr.apply(center);
    double u = 0, v = 0;
    REQUIRE(project(cam, p_cam, &u, &v));
    const int x = static_cast<int>(u + 0.5), y = static_cast<int>(v + 0.5);
    const Vec3d dir_cam =
        Vec3d((x - cam.cx) / cam.fx, (y - cam.cy) / cam.fy, 1.0).normalized();
    const Vec3d origin = fr.extr.to_world(Vec3d::Zero());
    const Vec3d dir = fr.extr.R.transpose() * dir_cam;
    auto s = tu::sphere_hit(origin, dir, center, 1.0);
    REQUIRE(s.has_value());
    CHECK(std::abs(fr.depth.at(y, x) - *s * dir_cam.z()) < 1e-5);
    ++checked;
  }
  CHECK(checked == 8);
}

TEST_CASE("dataset save/load round-trips bit-exactly") {
  SceneSpec spec = builtin_scene_spec("mini");
  spec.lidar_per_frame = 16;
  spec.depth_noise = 0.01;
  spec.track_noise = 0.3;
  const std::string dir = tu::scratch_dir("fixture_roundtrip_a");
  Dataset a = generate_fixture(spec, dir);

  const std::string dir2 = tu::scratch_dir("fixture_roundtrip_b");
  save_dataset(dir2, a);
  Dataset b = load_dataset(dir2);

  REQUIRE(a.frames.size() == b.frames.size());
  REQUIRE(a.num_timesteps == b.num_timesteps);
  for (size_t i = 0; i < a.frames.size(); ++i) {
    const FrameRecord& fa = a.frames[i];
    const FrameRecord& fb = b.frames[i];
    CHECK(fa.t_raw == fb.t_raw);
    CHECK(fa.camera_id == fb.camera_id);
    CHECK(fa.extr.R == fb.extr.R);
    CHECK(fa.extr.t == fb.extr.t);
    CHECK(fa.image.data == fb.image.data);
    CHECK(fa.mask.data == fb.mask.data);
    REQUIRE(fa.depth.data.size() == fb.depth.data.size());
    CHECK(std::memcmp(fa.depth.data.data(), fb.depth.data.data(),
                      fa.depth.data.size() * sizeof(float)) == 0);
    REQUIRE(fa.lidar.size() == fb.lidar.size());
    for (size_t k = 0; k < fa.lidar.size(); ++k)
      CHECK(fa.lidar[k].cast<float>() == fb.lidar[k].cast<float>());
  }
  REQUIRE(a.tracks.tracks.size() == b.tracks.tracks.size());
  for (const auto& [id, pts] : a.tracks.tracks) {
    const auto& pts_b = b.tracks.tracks.at(id);
    REQUIRE(pts.size() == pts_b.size());
    for (size_t k = 0; k < pts.size(); ++k) {
      CHECK(pts[k].t_raw == pts_b[k].t_raw);
      CHECK(pts[k].u == pts_b[k].u);
      CHECK(pts[k].v == pts_b[k].v);
      CHECK(pts[k].visible == pts_b[k].visible);
    }
  }
}

TEST_CASE("static scene tracks agree with the reprojection oracle") {
  SceneSpec spec;
  spec.width = spec.height = 64;
  spec.frames = 2;
  spec.track_grid = 4;
  PrimitiveSpec box;
  box.kind = PrimitiveSpec::Kind::kBox;
  box.half_extents = Vec3d(0.6, 0.5, 0.55);
  spec.primitives = {box};
  spec.cameras[0].orbit_deg_per_frame = 9.0;
  const std::string dir = tu::scratch_dir("fixture_reproject");
  Dataset ds = generate_fixture(spec, dir);

  const CameraModel& cam = ds.camera("cam0");
  const FrameRecord* f0 = ds.primary_frame(0);
  const FrameRecord* f1 = ds.primary_frame(1);
  REQUIRE(f0);
  REQUIRE(f1);
  int used = 0;
  for (const auto& [id, pts] : ds.tracks.tracks) {
    REQUIRE(pts.size() == 2);
    if (!pts[0].visible || !pts[1].visible) continue;
    // Cast the frame-0 track ray against the box analytically, then project
    // the hit into frame 1.
    const Vec3d origin = f0->extr.to_world(Vec3d::Zero());
    const Vec3d dir_cam =
        Vec3d((pts[0].u - cam.cx) / cam.fx, (pts[0].v - cam.cy) / cam.fy, 1.0)
            .normalized();
    const Vec3d dir = f0->extr.R.transpose() * dir_cam;
    auto s = tu::box_hit(origin, dir, Vec3d::Zero(), box.half_extents);
    REQUIRE(s.has_value());
    const Vec3d world = origin + dir * *s;
    double u = 0, v = 0;
    REQUIRE(project(cam, f1->extr.apply(world), &u, &v));
    CHECK(std::abs(u - pts[1].u) < 1e-4);
    CHECK(std::abs(v - pts[1].v) < 1e-4);
    ++used;
  }
  CHECK(used > 20);
}

TEST_CASE("frames whose mask is empty are excluded with a warning") {
  SceneSpec spec;
  spec.width = spec.height = 64;
  spec.frames = 6;
  spec.background.type = BackgroundSpec::Type::kNone;
  PrimitiveSpec p;
  p.kind = PrimitiveSpec::Kind::kSphere;
  p.radius = 0.25;
  p.motion.type = MotionSpec::Type::kTranslate;
  p.motion.velocity = Vec3d(1.5, 0, 0);
  spec.primitives = {p};
  spec.cameras[0].path = CameraSpecFx::Path::kStatic;
  spec.cameras[0].eye = Vec3d(0, 0, -3);
  spec.cameras[0].fov_deg = 30.0;
  const std::string dir = tu::scratch_dir("fixture_empty_mask");
  Dataset ds = generate_fixture(spec, dir);
  CHECK(ds.num_timesteps < 6);
  CHECK(ds.num_timesteps >= 1);
  CHECK(!ds.warnings.empty());
  CHECK(ds.canonical_t == 0);
  // Retained timesteps are contiguous even though raw indices are not.
  for (int i = 0; i < static_cast<int>(ds.frames.size()); ++i)
    CHECK(ds.frames[i].time_index == i);
}

TEST_CASE("loader errors name the offending file or field") {
  const std::string dir = tu::scratch_dir("fixture_errors");
  CHECK_THROWS_WITH_AS(load_dataset(dir), doctest::Contains("cameras.json"),
                       IoError);

  SceneSpec spec = builtin_scene_spec("mini");
  Dataset ds = generate_fixture(spec, dir);

  // Corrupt one depth file: header magic intact but payload truncated.
  {
    const std::string victim = dir + "/frames/00001_cam0_depth.f32";
    std::ifstream in(victim, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), {});
    in.close();
    std::ofstream out(victim, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<long>(bytes.size() / 2));
  }
  CHECK_THROWS_WITH_AS(load_dataset(dir), doctest::Contains("00001_cam0_depth"),
                       IoError);
}

TEST_CASE("loader rejects non-orthonormal rotations") {
  const std::string dir = tu::scratch_dir("fixture_badrot");
  generate_fixture(builtin_scene_spec("mini"), dir);
  std::ifstream in(dir + "/cameras.json");
  std::string text((std::istreambuf_iterator<char>(in)), {});
  in.close();
  // Scale one rotation entry; orthonormality check must trip.
  const size_t pos = text.find("\"rotation\"");
  REQUIRE(pos != std::string::npos);
  const size_t bracket = text.find('[', pos);
  text.insert(bracket + 1, " 1.5,");
  const size_t last = text.rfind(']', text.find(']', bracket));
  (void)last;
  // Replacing the 9-entry array with 10 entries triggers the shape check;
  // that also exercises field-level error naming.
  std::ofstream out(dir + "/cameras.json", std::ios::trunc);
  out << text;
  out.close();
  CHECK_THROWS_WITH_AS(load_dataset(dir), doctest::Contains("rotation"),
                       IoError);
}

TEST_CASE("two-camera fixture exposes both views per timestep") {
  SceneSpec spec = builtin_scene_spec("two-camera");
  spec.frames = 3;
  spec.width = spec.height = 64;
  const std::string dir = tu::scratch_dir("fixture_two_cam");
  Dataset ds = generate_fixture(spec, dir);
  CHECK(ds.cameras.size() == 2);
  for (int t = 0; t < ds.num_timesteps; ++t)
    CHECK(ds.frames_at(t).size() == 2);
  CHECK(ds.primary_camera_id() == "cam0");
  // Tracks live in the primary camera: all in-bounds for cam0.
  CHECK(!ds.tracks.tracks.empty());
}

TEST_CASE("degenerate scene specs are rejected") {
  SceneSpec spec = builtin_scene_spec("mini");
  spec.primitives[0].radius = 0.0;
  CHECK_THROWS_AS(spec.validate(), SpecError);
  spec = builtin_scene_spec("mini");
  spec.frames = 0;
  CHECK_THROWS_AS(spec.validate(), SpecError);
  spec = builtin_scene_spec("mini");
  spec.primitives.clear();
  CHECK_THROWS_AS(spec.validate(), SpecError);
  CHECK_THROWS_AS(builtin_scene_spec("no-such-scene"), SpecError);
}

TEST_CASE("ground truth file round-trips and evaluates") {
  SceneSpec spec = builtin_scene_spec("mini");
  const std::string dir = tu::scratch_dir("fixture_gt");
  generate_fixture(spec, dir);
  GroundTruth gt = load_ground_truth(dir + "/ground_truth.json");
  REQUIRE(gt.primitives.size() == 1);
  CHECK(gt.primitives[0].poses.size() == 4);
  CHECK(gt.sdf(Vec3d(0, 0, 0), 0) == doctest::Approx(-0.8));
  CHECK(gt.sdf(Vec3d(2, 0, 0), 0) == doctest::Approx(1.2));
  auto s = gt.raycast(Vec3d(-3, 0, 0), Vec3d(1, 0, 0), 0);
  REQUIRE(s.has_value());
  CHECK(*s == doctest::Approx(2.2).epsilon(1e-6));
  CHECK(!gt.raycast(Vec3d(-3, 5, 0), Vec3d(1, 0, 0), 0).has_value());
}
