// Copyright Contributors to the sdfsplat Project
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>

#include "sdfsplat/checkpoint.hpp"
#include "sdfsplat/config.hpp"
#include "sdfsplat/fixture.hpp"
#include "sdfsplat/guidance.hpp"
#include "sdfsplat/knn.hpp"
#include "sdfsplat/sdf_model.hpp"
#include "sdfsplat/trainer.hpp"
#include "test_util.hpp"

using namespace sdfsplat;
using testutil::scratch_dir;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Distance field pretrained toward a centered sphere of radius `half`
/// inside the canonical box [-half, half]^3.
SdfModel<double> sphere_model(double half, int pretrain = 300) {
  SdfArch arch;
  arch.grid_res = {8, 16};
  arch.grid_feat = 2;
  arch.def_depth = 2;
  arch.def_width = 32;
  arch.hyp_depth = 2;
  arch.hyp_width = 32;
  arch.sdf_depth = 2;
  arch.sdf_width = 32;
  arch.rgb_depth = 2;
  arch.rgb_width = 32;
  arch.latent_dim = 4;
  arch.pretrain_iters = pretrain;
  const Box3<double> box{Vec3d(-half, -half, -half), Vec3d(half, half, half)};
  Rng rng(11);
  return make_sdf_model(arch, box, box.expanded(0.5), 4, rng);
}

/// Deterministic golden-angle point spread over a sphere surface.
GaussianSet<double> shell_splats(int n, double radius, double log_scale) {
  GaussianSet<double> gs = GaussianSet<double>::zeros(n);
  const double ga = M_PI * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < n; ++i) {
    const double z = 1.0 - 2.0 * (i + 0.5) / n;
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double a = ga * i;
    gs.means.row(i) << radius * r * std::cos(a), radius * r * std::sin(a),
        radius * z;
    gs.log_scales.row(i).setConstant(log_scale);
    gs.opacities[i] = 0.8;
    gs.colors.row(i).setConstant(0.5);
  }
  return gs;
}

Dataset mini_fixture() {
  static Dataset ds =
      generate_fixture(builtin_scene_spec("mini"), scratch_dir("jo_mini"));
  return ds;
}

/// Schedule small enough for unit tests while still running every
/// mechanism: both init phases, two alternating cycles, and structural
/// maintenance.
TrainConfig short_config() {
  TrainConfig cfg;
  cfg.seed = 3;
  cfg.init_gauss_iters = 40;
  cfg.init_sdf_iters = 30;
  cfg.total_gauss_iters = 40;
  cfg.gauss_phase = 20;
  cfg.sdf_phase = 15;
  cfg.densify_start = 10;
  cfg.densify_every = 20;
  cfg.densify_stop_frac = 1.0;
  cfg.max_gaussians = 4000;
  cfg.bases = 4;
  cfg.rigid_k = 4;
  cfg.scaffold_max_points = 1500;
  cfg.rays_per_batch = 96;
  cfg.samples_per_ray = 32;
  cfg.surf_points_per_batch = 32;
  cfg.sdf_grid_res = {8, 16};
  cfg.sdf_grid_feat = 2;
  cfg.sdf_def_width = 32;
  cfg.sdf_def_depth = 2;
  cfg.sdf_hyp_width = 32;
  cfg.sdf_hyp_depth = 2;
  cfg.sdf_head_width = 32;
  cfg.sdf_head_depth = 2;
  cfg.sdf_latent_dim = 4;
  cfg.sdf_pretrain_iters = 40;
  cfg.background_iters = 0;
  return cfg;
}

const TrainResult& short_train_result() {
  static TrainResult res = train(mini_fixture(), short_config());
  return res;
}

}  // namespace

// ---------------------------------------------------------------------
// Configuration files

TEST_CASE("config defaults survive a save/load round trip byte for byte") {
  const std::string dir = scratch_dir("jo_cfg_rt");
  TrainConfig cfg;
  cfg.validate();
  save_train_config(dir + "/a.cfg", cfg);
  const TrainConfig loaded = load_train_config(dir + "/a.cfg");
  save_train_config(dir + "/b.cfg", loaded);
  CHECK(slurp(dir + "/a.cfg") == slurp(dir + "/b.cfg"));
  CHECK(loaded.seed == cfg.seed);
  CHECK(loaded.total_gauss_iters == cfg.total_gauss_iters);
  CHECK(loaded.sdf_grid_res == cfg.sdf_grid_res);
  CHECK(loaded.guidance.gamma_pr == doctest::Approx(cfg.guidance.gamma_pr));
  CHECK(loaded.sg4gp == cfg.sg4gp);
}

TEST_CASE("config keys set individually reach the right fields") {
  TrainConfig cfg;
  set_config_key(cfg, "seed", "42");
  set_config_key(cfg, "sdf_grid_res", "8,16,32");
  set_config_key(cfg, "sg4gp", "false");
  set_config_key(cfg, "gamma_pr", "0.1");
  set_config_key(cfg, "w_depth", "0.5");
  CHECK(cfg.seed == 42);
  CHECK(cfg.sdf_grid_res == std::vector<int>{8, 16, 32});
  CHECK_FALSE(cfg.sg4gp);
  CHECK(cfg.guidance.gamma_pr == doctest::Approx(0.1));
  CHECK(cfg.w_depth == doctest::Approx(0.5));
  CHECK_THROWS_AS(set_config_key(cfg, "not_a_key", "1"), SpecError);
}

TEST_CASE("config loader rejects unknown keys, bad values, and bad ranges") {
  const std::string dir = scratch_dir("jo_cfg_bad");
  const auto write = [&](const std::string& name, const std::string& body) {
    std::ofstream(dir + "/" + name) << body;
    return dir + "/" + name;
  };
  CHECK_THROWS_AS(load_train_config(write("u.cfg", "mystery = 3\n")),
                  SpecError);
  CHECK_THROWS_AS(load_train_config(write("v.cfg", "seed = banana\n")),
                  SpecError);
  CHECK_THROWS_AS(load_train_config(write("w.cfg", "bases = 0\n")), SpecError);
  CHECK_THROWS_AS(load_train_config(write("x.cfg", "seed 3\n")), SpecError);
  CHECK_THROWS_AS(load_train_config(dir + "/absent.cfg"), IoError);
  // Comments and blank lines are fine.
  const TrainConfig ok =
      load_train_config(write("y.cfg", "# comment\n\nseed = 9 # trailing\n"));
  CHECK(ok.seed == 9);
}

// ---------------------------------------------------------------------
// Checkpoint serialization

namespace {

Checkpoint random_checkpoint() {
  Rng rng(21);
  Checkpoint ck;
  ck.meta.canonical_t = 1;
  ck.meta.num_timesteps = 3;
  ck.meta.seed = 77;
  ck.meta.span = {Vec3d(-1.25, -0.5, 0.125), Vec3d(1.5, 2.0, 3.75)};
  const int n = 6, b = 2, t = 3;
  ck.gs = GaussianSet<double>::zeros(n);
  ck.mb = MotionBasis<double>::zeros(b, t, n);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < 3; ++k) {
      ck.gs.means(i, k) = rng.normal();
      ck.gs.log_scales(i, k) = rng.normal();
      ck.gs.colors(i, k) = rng.uniform();
    }
    for (int k = 0; k < 4; ++k) ck.gs.quats(i, k) = rng.normal();
    ck.gs.opacities[i] = rng.uniform();
    for (int j = 0; j < b; ++j) ck.mb.coeffs(i, j) = rng.normal();
  }
  ck.gs.ids = {5, 9, 2, 40, 41, 7};
  ck.gs.next_id = 42;
  for (int j = 0; j < b; ++j)
    for (int s = 0; s < t; ++s) {
      for (int k = 0; k < 3; ++k) ck.mb.basis_mu[j](s, k) = rng.normal();
      for (int k = 0; k < 4; ++k) ck.mb.basis_rot[j](s, k) = rng.normal();
    }
  ck.has_sdf = true;
  ck.sdf = sphere_model(1.0, /*pretrain=*/20);
  ck.has_background = true;
  ck.background = GaussianSet<double>::zeros(2);
  ck.background.means.row(1) << 0.5, -2.0, 4.0;
  ck.background.colors.row(0) << 0.9, 0.1, 0.2;
  return ck;
}

double f32(double v) { return double(float(v)); }

}  // namespace

TEST_CASE("checkpoint round-trips all sections at storage precision") {
  const std::string path = scratch_dir("jo_ckpt") + "/model.ckpt";
  Checkpoint ck = random_checkpoint();
  save_checkpoint(path, ck);
  Checkpoint rt = load_checkpoint(path);

  CHECK(rt.meta.canonical_t == ck.meta.canonical_t);
  CHECK(rt.meta.num_timesteps == ck.meta.num_timesteps);
  CHECK(rt.meta.seed == ck.meta.seed);
  // Boxes are stored at full precision.
  CHECK(rt.meta.span.lo == ck.meta.span.lo);
  CHECK(rt.meta.span.hi == ck.meta.span.hi);

  REQUIRE(rt.gs.size() == ck.gs.size());
  REQUIRE(rt.mb.num_bases() == ck.mb.num_bases());
  REQUIRE(rt.mb.num_frames == ck.mb.num_frames);
  // Arrays are stored as f32; the loaded value must equal the rounded
  // original exactly, not merely approximately.
  for (int i = 0; i < ck.gs.size(); ++i) {
    for (int k = 0; k < 3; ++k) {
      CHECK(rt.gs.means(i, k) == f32(ck.gs.means(i, k)));
      CHECK(rt.gs.log_scales(i, k) == f32(ck.gs.log_scales(i, k)));
      CHECK(rt.gs.colors(i, k) == f32(ck.gs.colors(i, k)));
    }
    for (int k = 0; k < 4; ++k)
      CHECK(rt.gs.quats(i, k) == f32(ck.gs.quats(i, k)));
    CHECK(rt.gs.opacities[i] == f32(ck.gs.opacities[i]));
    for (int j = 0; j < ck.mb.num_bases(); ++j)
      CHECK(rt.mb.coeffs(i, j) == f32(ck.mb.coeffs(i, j)));
  }
  CHECK(rt.gs.ids == ck.gs.ids);
  CHECK(rt.gs.next_id == ck.gs.next_id);
  for (int j = 0; j < ck.mb.num_bases(); ++j) {
    CHECK(rt.mb.basis_mu[j](2, 1) == f32(ck.mb.basis_mu[j](2, 1)));
    CHECK(rt.mb.basis_rot[j](0, 3) == f32(ck.mb.basis_rot[j](0, 3)));
  }

  REQUIRE(rt.has_sdf);
  CHECK(rt.sdf.grid.res == ck.sdf.grid.res);
  CHECK(rt.sdf.arch.def_width == ck.sdf.arch.def_width);
  CHECK(rt.sdf.arch.latent_dim == ck.sdf.arch.latent_dim);
  CHECK(rt.sdf.world_box.lo == ck.sdf.world_box.lo);
  CHECK(rt.sdf.grid.box.hi == ck.sdf.grid.box.hi);
  auto orig_params = collect_params(ck.sdf);
  auto rt_params = collect_params(rt.sdf);
  REQUIRE(orig_params.size() == rt_params.size());
  int64_t checked = 0;
  for (size_t p = 0; p < orig_params.size(); ++p) {
    REQUIRE(orig_params[p].size == rt_params[p].size);
    for (int64_t i = 0; i < orig_params[p].size && checked < 4000;
         ++i, ++checked)
      CHECK(rt_params[p].data[i] == f32(orig_params[p].data[i]));
  }

  REQUIRE(rt.has_background);
  CHECK(rt.background.size() == 2);
  CHECK(rt.background.means(1, 2) == f32(ck.background.means(1, 2)));
  CHECK(rt.background.colors(0, 0) == f32(ck.background.colors(0, 0)));

  // The field still evaluates after reload.
  MatXR<double> q(1, 3);
  q.row(0) << 0.2, 0.1, -0.3;
  const VecX<double> a = sdf_forward(ck.sdf, q, 0, MatXR<double>(), false, -1).sdf;
  const VecX<double> c = sdf_forward(rt.sdf, q, 0, MatXR<double>(), false, -1).sdf;
  CHECK(a[0] == doctest::Approx(c[0]).epsilon(1e-5));
}

TEST_CASE("checkpoint loader rejects corrupt and truncated files") {
  const std::string dir = scratch_dir("jo_ckpt_bad");
  Checkpoint ck = random_checkpoint();
  ck.has_background = false;
  save_checkpoint(dir + "/good.ckpt", ck);
  const std::string bytes = slurp(dir + "/good.ckpt");

  std::ofstream(dir + "/magic.ckpt", std::ios::binary)
      << "NOTACKPTFILE" << bytes.substr(12);
  CHECK_THROWS_AS(load_checkpoint(dir + "/magic.ckpt"), IoError);

  std::ofstream(dir + "/short.ckpt", std::ios::binary)
      << bytes.substr(0, bytes.size() / 2);
  CHECK_THROWS_AS(load_checkpoint(dir + "/short.ckpt"), IoError);

  std::ofstream(dir + "/trail.ckpt", std::ios::binary) << bytes << "x";
  CHECK_THROWS_AS(load_checkpoint(dir + "/trail.ckpt"), IoError);

  CHECK_THROWS_AS(load_checkpoint(dir + "/absent.ckpt"), IoError);
}

// ---------------------------------------------------------------------
// Guided sampling interval

TEST_CASE("sample range follows the scaled-distance rule around depth") {
  GuidanceConfig cfg;
  cfg.gamma_samp = 3.0;
  // Frozen instance: |S| = 0.1, depth 5 -> half-width 0.3.
  DepthInterval di = sample_range(5.0, 0.1, 1.0, 0.01, 100.0, 1e-6, cfg);
  CHECK(di.guided);
  CHECK(di.near == doctest::Approx(4.7).epsilon(1e-12));
  CHECK(di.far == doctest::Approx(5.3).epsilon(1e-12));
}

TEST_CASE("sample range width never collapses below the voxel floor") {
  GuidanceConfig cfg;
  cfg.gamma_samp = 3.0;
  const DepthInterval di = sample_range(5.0, 0.0, 1.0, 0.01, 100.0, 0.2, cfg);
  CHECK(di.guided);
  CHECK(di.near == doctest::Approx(4.9).epsilon(1e-12));
  CHECK(di.far == doctest::Approx(5.1).epsilon(1e-12));
}

TEST_CASE("sample range falls back to the full slab without coverage") {
  GuidanceConfig cfg;
  const DepthInterval di = sample_range(5.0, 0.1, 0.3, 0.25, 8.0, 0.1, cfg);
  CHECK_FALSE(di.guided);
  CHECK(di.near == doctest::Approx(0.25));
  CHECK(di.far == doctest::Approx(8.0));
}

TEST_CASE("sample range clips to the scene slab and stays well formed") {
  GuidanceConfig cfg;
  cfg.gamma_samp = 3.0;
  const DepthInterval wide = sample_range(5.0, 10.0, 1.0, 0.5, 20.0, 0.1, cfg);
  CHECK(wide.guided);
  CHECK(wide.near == doctest::Approx(0.5));
  CHECK(wide.far == doctest::Approx(20.0));

  // Guidance entirely behind the far plane degrades to the full slab.
  const DepthInterval behind =
      sample_range(30.0, 0.01, 1.0, 0.5, 20.0, 0.1, cfg);
  CHECK_FALSE(behind.guided);

  Rng rng(5);
  for (int i = 0; i < 500; ++i) {
    const double near = rng.uniform(0.01, 1.0);
    const double far = near + rng.uniform(1.0, 30.0);
    const double d = rng.uniform(near, far);
    const double s = rng.uniform() * 2.0;
    const DepthInterval di =
        sample_range(d, s, 1.0, near, far, rng.uniform() * 0.5, cfg);
    REQUIRE(di.guided);
    REQUIRE(di.near < di.far);
    REQUIRE(di.near >= near);
    REQUIRE(di.far <= far);
    // An in-slab guided depth always lies inside the interval.
    REQUIRE(di.near <= d);
    REQUIRE(di.far >= d);
  }
}

// ---------------------------------------------------------------------
// Guided depth map

TEST_CASE("guided depth for a single opaque splat matches its z") {
  GaussianSet<double> gs = GaussianSet<double>::zeros(1);
  gs.means.row(0) << 0, 0, 2.0;
  gs.log_scales.row(0).setConstant(std::log(0.08));
  gs.opacities[0] = 0.99;
  gs.colors.row(0).setConstant(0.7);
  MotionBasis<double> mb = MotionBasis<double>::zeros(1, 1, 1);
  CameraModel cam{80.0, 80.0, 31.5, 31.5, 64, 64};
  RasterizeConfig rc;
  const GuidedDepth gd =
      guided_depth_map(gs, mb, 0, cam, RigidTransform{}, rc);
  REQUIRE(gd.width == 64);
  REQUIRE(gd.height == 64);
  const int cxp = 31, cyp = 31;
  REQUIRE(gd.has_guidance(cyp, cxp));
  CHECK(gd.depth.at(cyp, cxp) == doctest::Approx(2.0).epsilon(1e-3));
  CHECK(gd.first_splat(cyp, cxp) == 0);
}

TEST_CASE("guided depth flags every pixel of an empty render") {
  GaussianSet<double> gs = GaussianSet<double>::zeros(0);
  MotionBasis<double> mb = MotionBasis<double>::zeros(1, 1, 0);
  CameraModel cam{50.0, 50.0, 15.5, 15.5, 32, 32};
  const GuidedDepth gd =
      guided_depth_map(gs, mb, 0, cam, RigidTransform{}, RasterizeConfig{});
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      REQUIRE_FALSE(gd.has_guidance(y, x));
      REQUIRE(gd.first_splat(y, x) == -1);
    }
}

// ---------------------------------------------------------------------
// Densification

TEST_CASE("densify leaves the set alone when no cell is near the surface") {
  SdfModel<double> sdf = sphere_model(1.0);
  GaussianSet<double> gs = shell_splats(200, 1.0, std::log(0.05));
  MotionBasis<double> mb = MotionBasis<double>::zeros(2, 4, 200);
  const MatX3<double> before = gs.means;
  Dataset ds;  // no frames; irrelevant because the gate rejects first
  GuidanceConfig cfg;
  cfg.n_grid = 8;
  cfg.tau_s = 1e-9;  // nothing is this close to the zero set
  Rng rng(1);
  std::vector<TrainEvent> events;
  const int added = densify(gs, mb, sdf, ds, 0, cfg, RasterizeConfig{}, 7,
                            1000, rng, &events);
  CHECK(added == 0);
  CHECK(events.empty());
  CHECK(gs.size() == 200);
  CHECK(gs.means == before);
}

namespace {

/// Hand-rolled scene for structural tests: a splat shell around the
/// pretrained sphere, one camera in front, and two deliberately
/// under-filled cells (one facing the camera, one behind the object).
struct DensifyScene {
  SdfModel<double> sdf = sphere_model(1.0);
  GaussianSet<double> gs;
  MotionBasis<double> mb;
  Dataset ds;
  GuidanceConfig cfg;
  RasterizeConfig rc;
  Vec3<double> cell_extent;

  DensifyScene() {
    GaussianSet<double> full = shell_splats(1600, 1.0, std::log(0.06));
    cfg.n_grid = 8;
    cfg.tau_s = 0.35;
    cfg.tau_n = 0.25;
    cfg.k_nn = 3;
    const Box3<double>& box = sdf.grid.box;
    cell_extent = box.extent() / cfg.n_grid;

    // Thin the cells containing the two poles down to one splat each.
    const auto cell_index = [&](const Vec3<double>& p) {
      const Vec3<double> rel = p - box.lo;
      return std::array<int, 3>{
          static_cast<int>(std::floor(rel.x() / cell_extent.x())),
          static_cast<int>(std::floor(rel.y() / cell_extent.y())),
          static_cast<int>(std::floor(rel.z() / cell_extent.z()))};
    };
    const std::array<int, 3> front = cell_index(Vec3<double>(0, 0, 0.95));
    const std::array<int, 3> back = cell_index(Vec3<double>(0, 0, -0.95));
    std::vector<char> keep(full.size(), 1);
    int kept_front = 0, kept_back = 0;
    for (int i = 0; i < full.size(); ++i) {
      const std::array<int, 3> c =
          cell_index(full.means.row(i).transpose());
      if (c == front && ++kept_front > 1) keep[i] = 0;
      if (c == back && ++kept_back > 1) keep[i] = 0;
    }
    full.filter(keep);
    gs = full;
    mb = MotionBasis<double>::zeros(2, 4, gs.size());

    CameraModel cam{100.0, 100.0, 47.5, 47.5, 96, 96};
    ds.cameras["main"] = cam;
    FrameRecord fr;
    fr.t_raw = 0;
    fr.time_index = 0;
    fr.camera_id = "main";
    fr.extr = look_at(Vec3d(0, 0, 3.2), Vec3d::Zero(), Vec3d(0, 1, 0));
    fr.image_f = Image<float>(96, 96, 3, 0.0f);
    for (int y = 0; y < 96; ++y)
      for (int x = 0; x < 96; ++x) {
        fr.image_f.at(y, x, 0) = 0.25f;
        fr.image_f.at(y, x, 1) = 0.5f;
        fr.image_f.at(y, x, 2) = 0.75f;
      }
    fr.mask = Image<uint8_t>(96, 96, 1, 1);
    fr.depth = Image<float>(96, 96, 1, 0.0f);
    ds.frames.push_back(std::move(fr));
    ds.num_timesteps = 1;
  }
};

}  // namespace

TEST_CASE("densify refills covered cells from depth and hidden cells "
          "from neighbor statistics") {
  DensifyScene sc;
  const int before = sc.gs.size();
  Rng rng(4);
  std::vector<TrainEvent> events;
  const int added = densify(sc.gs, sc.mb, sc.sdf, sc.ds, 0, sc.cfg, sc.rc, 9,
                            100000, rng, &events);
  REQUIRE(added > 0);
  CHECK(sc.gs.size() == before + added);
  CHECK(sc.mb.coeffs.rows() == sc.gs.size());
  REQUIRE_FALSE(events.empty());

  const Box3<double>& box = sc.sdf.grid.box;
  int n_depth = 0, n_stats = 0;
  std::set<int64_t> seen;
  int64_t counted = 0;
  for (const TrainEvent& ev : events) {
    CHECK(ev.op == "densify");
    CHECK(ev.iter == 9);
    CHECK(ev.t == 0);
    // Gate: only cells within tau_s of the zero set spawn splats.
    CHECK(std::abs(ev.sdf) < sc.cfg.tau_s);
    const Vec3<double> cell_lo =
        box.lo + Vec3<double>(ev.cell[0], ev.cell[1], ev.cell[2])
                     .cwiseProduct(sc.cell_extent);
    if (ev.cause == "depth-backprojection") {
      ++n_depth;
      REQUIRE(ev.ids.size() == 3);
      for (int64_t id : ev.ids) {
        // Identity motion at t=0: the canonical placement is the
        // back-projected point itself, inside the event's cell.
        const auto it =
            std::find(sc.gs.ids.begin(), sc.gs.ids.end(), id);
        REQUIRE(it != sc.gs.ids.end());
        const int row = static_cast<int>(it - sc.gs.ids.begin());
        const Vec3<double> p = sc.gs.means.row(row).transpose();
        for (int k = 0; k < 3; ++k) {
          CHECK(p[k] >= cell_lo[k] - 1e-9);
          CHECK(p[k] <= cell_lo[k] + sc.cell_extent[k] + 1e-9);
        }
        // Colors come straight from the covering image.
        CHECK(sc.gs.colors(row, 0) == doctest::Approx(0.25).epsilon(1e-6));
        CHECK(sc.gs.colors(row, 2) == doctest::Approx(0.75).epsilon(1e-6));
      }
    } else {
      ++n_stats;
      CHECK(ev.cause == "neighbor-stats");
      REQUIRE(static_cast<int>(ev.ids.size()) == sc.cfg.k_nn);
      for (int64_t id : ev.ids) {
        const auto it =
            std::find(sc.gs.ids.begin(), sc.gs.ids.end(), id);
        REQUIRE(it != sc.gs.ids.end());
        const int row = static_cast<int>(it - sc.gs.ids.begin());
        // Zero-variance attributes reproduce the neighbors exactly.
        CHECK(sc.gs.opacities[row] == doctest::Approx(0.8));
        CHECK(sc.gs.colors(row, 1) == doctest::Approx(0.5));
        CHECK(sc.gs.log_scales(row, 0) ==
              doctest::Approx(std::log(0.06)));
        CHECK(sc.gs.quats.row(row).transpose()[0] == doctest::Approx(1.0));
        CHECK(sc.mb.coeffs.row(row).cwiseAbs().maxCoeff() ==
              doctest::Approx(0.0));
      }
    }
    for (int64_t id : ev.ids) CHECK(seen.insert(id).second);
    counted += static_cast<int64_t>(ev.ids.size());
  }
  CHECK(counted == added);
  // The camera-facing hole refills from rendered depth, the far side
  // from neighbor statistics.
  CHECK(n_depth >= 1);
  CHECK(n_stats >= 1);
}

TEST_CASE("densify statistical spawns stay within four sigma of their "
          "neighborhood across seeds") {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    DensifyScene sc;
    const int before = sc.gs.size();
    const GaussianSet<double> orig = sc.gs;
    const PosedGaussians<double> posed = pose_at(orig, sc.mb, 0);
    Rng rng(100 + seed);
    std::vector<TrainEvent> events;
    densify(sc.gs, sc.mb, sc.sdf, sc.ds, 0, sc.cfg, sc.rc, 0, 100000, rng,
            &events);
    const Box3<double>& box = sc.sdf.grid.box;
    for (const TrainEvent& ev : events) {
      if (ev.cause != "neighbor-stats") continue;
      // Recompute the neighborhood statistics the spawn drew from.
      const Vec3<double> center =
          box.lo + Vec3<double>(ev.cell[0] + 0.5, ev.cell[1] + 0.5,
                                ev.cell[2] + 0.5)
                       .cwiseProduct(sc.cell_extent);
      MatX3<double> q(1, 3);
      q.row(0) = center.transpose();
      const KnnResult<double> nn =
          knn_search_points(posed.means, q, sc.cfg.k_nn);
      Vec3<double> mu = Vec3<double>::Zero(), var = Vec3<double>::Zero();
      for (int j = 0; j < nn.k(); ++j)
        mu += orig.means.row(nn.idx(0, j)).transpose();
      mu /= nn.k();
      for (int j = 0; j < nn.k(); ++j) {
        const Vec3<double> d =
            orig.means.row(nn.idx(0, j)).transpose() - mu;
        var += d.cwiseProduct(d);
      }
      var /= nn.k();
      const Vec3<double> sigma = var.cwiseSqrt();
      for (int64_t id : ev.ids) {
        const auto it = std::find(sc.gs.ids.begin(), sc.gs.ids.end(), id);
        REQUIRE(it != sc.gs.ids.end());
        const Vec3<double> p =
            sc.gs.means.row(static_cast<int>(it - sc.gs.ids.begin()))
                .transpose();
        for (int k = 0; k < 3; ++k)
          REQUIRE(std::abs(p[k] - mu[k]) <= 4.0 * sigma[k] + 1e-12);
      }
    }
    REQUIRE(sc.gs.size() > before);
  }
}

// ---------------------------------------------------------------------
// Pruning

TEST_CASE("prune removes far-field splats and logs recomputable scores") {
  SdfModel<double> sdf = sphere_model(1.0);
  GaussianSet<double> gs = shell_splats(60, 1.0, std::log(0.05));
  // Eight decoys clustered well off the surface; their neighbors are
  // each other, so both terms of the score are large.
  Rng jitter(2);
  for (int i = 0; i < 8; ++i) {
    const int64_t id = gs.push_back(
        Vec3<double>(1.8 + 0.04 * jitter.normal(), 0.04 * jitter.normal(),
                     0.04 * jitter.normal()),
        Vec4<double>(1, 0, 0, 0), Vec3<double>::Constant(std::log(0.05)),
        0.8, Vec3<double>::Constant(0.5));
    CHECK(id == 60 + i);
  }
  MotionBasis<double> mb = MotionBasis<double>::zeros(2, 4, gs.size());
  GuidanceConfig cfg;
  cfg.gamma_pr = 0.5;
  cfg.tau_pr = 0.02;
  cfg.k_nn = 3;
  cfg.prune_window = 4;

  // Independent score computation from the same public queries.
  const int n = gs.size();
  const KnnResult<double> nn = knn_search(gs.means, cfg.k_nn);
  VecX<double> expect = VecX<double>::Zero(n);
  for (int t = 0; t <= 3; ++t) {
    const PosedGaussians<double> posed = pose_at(gs, mb, t);
    const VecX<double> s =
        sdf_extended(sdf, MatXR<double>(posed.means), t).cwiseAbs();
    for (int i = 0; i < n; ++i) {
      double acc = s[i];
      for (int j = 0; j < nn.k(); ++j) acc += s[nn.idx(i, j)];
      expect[i] += std::exp(-acc / cfg.gamma_pr);
    }
  }

  std::vector<TrainEvent> events;
  const int removed = prune(gs, mb, sdf, 3, cfg, 42, &events);
  CHECK(removed == 8);
  CHECK(gs.size() == 60);
  CHECK(mb.coeffs.rows() == 60);
  // Survivors are exactly the on-surface shell.
  for (int i = 0; i < 60; ++i) CHECK(gs.ids[i] == i);

  REQUIRE(events.size() == 1);
  const TrainEvent& ev = events[0];
  CHECK(ev.op == "prune");
  CHECK(ev.iter == 42);
  CHECK(ev.t == 3);
  CHECK(ev.cause == "window-score");
  REQUIRE(ev.ids.size() == 8);
  REQUIRE(ev.scores.size() == 8);
  for (size_t i = 0; i < ev.ids.size(); ++i) {
    CHECK(ev.ids[i] == 60 + static_cast<int64_t>(i));
    CHECK(ev.scores[i] ==
          doctest::Approx(expect[60 + static_cast<int>(i)]).epsilon(1e-9));
    CHECK(ev.scores[i] < cfg.tau_pr);
  }
  // Kept splats really were above threshold.
  for (int i = 0; i < 60; ++i) CHECK(expect[i] >= cfg.tau_pr);
}

TEST_CASE("prune with a zero window is a no-op") {
  SdfModel<double> sdf = sphere_model(1.0, /*pretrain=*/30);
  GaussianSet<double> gs = shell_splats(60, 1.9, std::log(0.05));
  MotionBasis<double> mb = MotionBasis<double>::zeros(1, 4, 60);
  GuidanceConfig cfg;
  cfg.prune_window = 0;
  std::vector<TrainEvent> events;
  CHECK(prune(gs, mb, sdf, 3, cfg, 0, &events) == 0);
  CHECK(gs.size() == 60);
  CHECK(events.empty());
}

TEST_CASE("prune never cuts below the survivor floor") {
  SdfModel<double> sdf = sphere_model(1.0, /*pretrain=*/30);
  // Every splat at the center: all scores identical and hopeless.
  GaussianSet<double> gs = GaussianSet<double>::zeros(68);
  gs.log_scales.array() += std::log(0.05);
  gs.opacities.setConstant(0.5);
  MotionBasis<double> mb = MotionBasis<double>::zeros(1, 4, 68);
  GuidanceConfig cfg;
  cfg.gamma_pr = 1e-3;
  cfg.tau_pr = 0.02;
  cfg.prune_window = 4;
  std::vector<TrainEvent> events;
  const int removed = prune(gs, mb, sdf, 3, cfg, 0, &events);
  CHECK(removed == 18);
  CHECK(gs.size() == 50);
  // Equal scores tie-break toward keeping the lowest indices.
  for (int i = 0; i < 50; ++i) CHECK(gs.ids[i] == i);
  REQUIRE(events.size() == 1);
  CHECK(events[0].ids.size() == 18);
  CHECK(events[0].ids.front() == 50);
}

TEST_CASE("structural events serialize deterministically") {
  std::vector<std::string> lines[2];
  for (int run = 0; run < 2; ++run) {
    DensifyScene sc;
    Rng rng(4);
    std::vector<TrainEvent> events;
    densify(sc.gs, sc.mb, sc.sdf, sc.ds, 0, sc.cfg, sc.rc, 9, 100000, rng,
            &events);
    GuidanceConfig pr = sc.cfg;
    pr.gamma_pr = 0.5;
    pr.prune_window = 1;
    prune(sc.gs, sc.mb, sc.sdf, 0, pr, 9, &events);
    for (const TrainEvent& ev : events)
      lines[run].push_back(event_to_json(ev));
  }
  REQUIRE_FALSE(lines[0].empty());
  REQUIRE(lines[0] == lines[1]);
  // Every line is standalone JSON with the required fields.
  for (const std::string& l : lines[0]) {
    CHECK(l.find("\"iter\":") != std::string::npos);
    CHECK(l.find("\"op\":") != std::string::npos);
    CHECK(l.find('\n') == std::string::npos);
  }
}

// ---------------------------------------------------------------------
// World box

TEST_CASE("world box covers every masked observation in the dataset") {
  const Dataset ds = mini_fixture();
  const Box3<double> box = compute_world_box(ds);
  REQUIRE((box.hi - box.lo).minCoeff() > 0);
  for (const FrameRecord& fr : ds.frames) {
    const CameraModel& cam = ds.camera(fr.camera_id);
    for (int y = 0; y < fr.mask.height; ++y)
      for (int x = 0; x < fr.mask.width; ++x) {
        if (fr.mask.at(y, x) == 0) continue;
        const float d = fr.depth.at(y, x);
        if (!(d > 0)) continue;
        // The padded box strictly contains the unpadded observations
        // the builder visited, and the stride-skipped ones lie between
        // them on a smooth surface.
        if ((x % 4) || (y % 4)) continue;
        REQUIRE(box.contains(fr.extr.to_world(backproject(cam, x, y, d))));
      }
  }
}

// ---------------------------------------------------------------------
// End-to-end training

TEST_CASE("short schedule trains both representations to a checkpoint") {
  const TrainResult& res = short_train_result();
  REQUIRE_FALSE(res.aborted);
  REQUIRE(res.abort_reason.empty());

  // Row counts follow the schedule exactly.
  const auto phase_count = [&](const char* phase, bool init_sdf) {
    int64_t c = 0;
    if (init_sdf) {
      for (const SdfLossRow& r : res.sdf_rows) c += r.phase == phase;
    } else {
      for (const GaussLossRow& r : res.gauss_rows) c += r.phase == phase;
    }
    return c;
  };
  CHECK(phase_count("init", false) == 40);
  CHECK(phase_count("joint", false) == 40);
  CHECK(phase_count("init", true) == 30);
  CHECK(phase_count("joint", true) == 30);  // two cycles of 15

  for (const GaussLossRow& r : res.gauss_rows)
    REQUIRE(std::isfinite(r.total));
  for (const SdfLossRow& r : res.sdf_rows) REQUIRE(std::isfinite(r.total));

  // The photometric fit improves over the init phase.
  double first = 0, last = 0;
  for (int i = 0; i < 10; ++i) {
    first += res.gauss_rows[i].total;
    last += res.gauss_rows[30 + i].total;
  }
  CHECK(last < first);

  // Event log leads with the run configuration.
  REQUIRE_FALSE(res.events.empty());
  CHECK(res.events[0].op == "config");
  const std::string head = event_to_json(res.events[0]);
  CHECK(head.find("\"sg4gp\":true") != std::string::npos);
  CHECK(head.find("\"seed\":3") != std::string::npos);

  const Checkpoint& ck = res.ckpt;
  REQUIRE(ck.has_sdf);
  CHECK_FALSE(ck.has_background);
  CHECK(ck.meta.num_timesteps == 4);
  CHECK(ck.meta.seed == 3);
  CHECK(ck.gs.size() > 0);
  CHECK(ck.mb.num_bases() == 4);
  CHECK(ck.mb.coeffs.rows() == ck.gs.size());
  CHECK((ck.meta.span.hi - ck.meta.span.lo).minCoeff() > 0);

  // The trained splats carry finite, normalized state.
  for (int i = 0; i < ck.gs.size(); ++i) {
    REQUIRE(ck.gs.means.row(i).allFinite());
    REQUIRE(ck.gs.quats.row(i).norm() == doctest::Approx(1.0).epsilon(1e-9));
  }

}

TEST_CASE("guided depth from a surface-fitted splat set matches the "
          "sensor depth") {
  // A converged fit places near-opaque splats on the visible surface;
  // build that state directly from the sensor observations instead of
  // paying for a long optimization here.
  const Dataset ds = mini_fixture();
  const FrameRecord* pf = ds.primary_frame(ds.canonical_t);
  REQUIRE(pf != nullptr);
  const CameraModel& cam = ds.camera(pf->camera_id);

  std::vector<Vec3d> pts;
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x) {
      if (pf->mask.at(y, x) == 0) continue;
      const float d = pf->depth.at(y, x);
      if (d > 0) pts.push_back(pf->extr.to_world(backproject(cam, x, y, d)));
    }
  REQUIRE(pts.size() > 100);
  GaussianSet<double> gs = GaussianSet<double>::zeros(
      static_cast<int>(pts.size()));
  for (int i = 0; i < gs.size(); ++i) {
    gs.means.row(i) = pts[i].transpose();
    // Footprint of roughly one pixel at the observed range.
    const double z = pf->extr.apply(pts[i]).z();
    gs.log_scales.row(i).setConstant(std::log(1.2 * z / cam.fx));
    gs.opacities[i] = 0.95;
    gs.colors.row(i).setConstant(0.5);
  }
  MotionBasis<double> mb =
      MotionBasis<double>::zeros(1, ds.num_timesteps, gs.size());

  const GuidedDepth gd = guided_depth_map(gs, mb, ds.canonical_t, cam,
                                          pf->extr, RasterizeConfig{});
  int object_px = 0, within = 0;
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x) {
      if (pf->mask.at(y, x) == 0 || !gd.has_guidance(y, x)) continue;
      const double ref = pf->depth.at(y, x);
      if (!(ref > 0)) continue;
      ++object_px;
      if (std::abs(gd.depth.at(y, x) - ref) / ref < 0.05) ++within;
    }
  REQUIRE(object_px > 100);
  CHECK(double(within) / object_px >= 0.9);
}

TEST_CASE("the same seed reproduces training bit for bit") {
  const std::string dir = scratch_dir("jo_repro");
  const TrainResult& a = short_train_result();
  const TrainResult b = train(mini_fixture(), short_config());
  REQUIRE_FALSE(b.aborted);
  save_checkpoint(dir + "/a.ckpt", a.ckpt);
  save_checkpoint(dir + "/b.ckpt", b.ckpt);
  CHECK(slurp(dir + "/a.ckpt") == slurp(dir + "/b.ckpt"));

  REQUIRE(a.events.size() == b.events.size());
  for (size_t i = 0; i < a.events.size(); ++i)
    CHECK(event_to_json(a.events[i]) == event_to_json(b.events[i]));

  write_gauss_loss_csv(dir + "/ga.csv", a.gauss_rows);
  write_gauss_loss_csv(dir + "/gb.csv", b.gauss_rows);
  CHECK(slurp(dir + "/ga.csv") == slurp(dir + "/gb.csv"));
  write_sdf_loss_csv(dir + "/sa.csv", a.sdf_rows);
  write_sdf_loss_csv(dir + "/sb.csv", b.sdf_rows);
  CHECK(slurp(dir + "/sa.csv") == slurp(dir + "/sb.csv"));

  write_event_log(dir + "/ev.jsonl", a.events);
  std::ifstream ev(dir + "/ev.jsonl");
  std::string line;
  size_t n_lines = 0;
  while (std::getline(ev, line)) ++n_lines;
  CHECK(n_lines == a.events.size());
}

TEST_CASE("with guidance off the splat path ignores the field entirely") {
  TrainConfig base = short_config();
  base.init_gauss_iters = 10;
  base.init_sdf_iters = 5;
  base.total_gauss_iters = 10;
  base.gauss_phase = 5;
  base.sdf_phase = 5;
  base.rays_per_batch = 48;
  base.samples_per_ray = 16;
  base.scaffold_max_points = 800;
  base.sg4gp = false;
  base.gps4s = false;

  TrainConfig other = base;
  other.sdf_def_width = 16;       // different field architecture
  other.sdf_pretrain_iters = 10;  // and different field RNG consumption

  const TrainResult ra = train(mini_fixture(), base);
  const TrainResult rb = train(mini_fixture(), other);
  REQUIRE_FALSE(ra.aborted);
  REQUIRE_FALSE(rb.aborted);

  // The splat side must be unaffected, down to the last bit.
  REQUIRE(ra.ckpt.gs.size() == rb.ckpt.gs.size());
  CHECK(ra.ckpt.gs.means == rb.ckpt.gs.means);
  CHECK(ra.ckpt.gs.quats == rb.ckpt.gs.quats);
  CHECK(ra.ckpt.gs.log_scales == rb.ckpt.gs.log_scales);
  CHECK(ra.ckpt.gs.opacities == rb.ckpt.gs.opacities);
  CHECK(ra.ckpt.gs.colors == rb.ckpt.gs.colors);
  CHECK(ra.ckpt.mb.coeffs == rb.ckpt.mb.coeffs);
  for (int j = 0; j < ra.ckpt.mb.num_bases(); ++j) {
    CHECK(ra.ckpt.mb.basis_mu[j] == rb.ckpt.mb.basis_mu[j]);
    CHECK(ra.ckpt.mb.basis_rot[j] == rb.ckpt.mb.basis_rot[j]);
  }
  // While the field side genuinely differs.
  CHECK(ra.ckpt.sdf.arch.def_width != rb.ckpt.sdf.arch.def_width);
}

TEST_CASE("a diverging field aborts training and keeps the last good state") {
  TrainConfig cfg = short_config();
  cfg.init_gauss_iters = 5;
  cfg.init_sdf_iters = 40;
  cfg.scaffold_max_points = 600;
  cfg.sdf_lr = 1e12;  // guaranteed overflow within a few steps
  const TrainResult res = train(mini_fixture(), cfg);
  CHECK(res.aborted);
  CHECK_FALSE(res.abort_reason.empty());
  CHECK(res.abort_reason.find("sdf") != std::string::npos);
  CHECK(static_cast<int64_t>(res.sdf_rows.size()) < 40);
  // The returned checkpoint predates the blow-up and still loads.
  REQUIRE(res.ckpt.has_sdf);
  CHECK(res.ckpt.gs.size() > 0);
  const std::string path = scratch_dir("jo_abort") + "/last.ckpt";
  save_checkpoint(path, res.ckpt);
  const Checkpoint rt = load_checkpoint(path);
  CHECK(rt.gs.size() == res.ckpt.gs.size());
}
