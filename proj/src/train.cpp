// Copyright Contributors to the sdfsplat Project
// SPDX-License-Identifier: Apache-2.0
//
// The training pipeline: scaffold construction, splat and SDF
// initialization, then the alternating schedule where each
// representation takes turns while guiding the other. All randomness
// flows through streams forked up front from the run seed, one per
// concern, so toggling one mechanism never shifts another's draws.

#include "sdfsplat/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "sdfsplat/adam.hpp"
#include "sdfsplat/gauss_losses.hpp"
#include "sdfsplat/knn.hpp"
#include "sdfsplat/scaffold.hpp"
#include "sdfsplat/sdf_losses.hpp"

namespace sdfsplat {

using ordered_json = nlohmann::ordered_json;

namespace {

// Internal control flow for the NaN contract: unwinds to run(), which
// returns the last state that completed a phase.
struct Abort {
  std::string reason;
};

void check_finite(double v, const char* where, int64_t iter) {
  if (std::isfinite(v)) return;
  throw Abort{std::string(where) + " loss non-finite at iteration " +
              std::to_string(iter)};
}

bool ray_box(const Box3<double>& b, const Vec3<double>& o,
             const Vec3<double>& d, double* t0, double* t1) {
  double lo = -1e30, hi = 1e30;
  for (int k = 0; k < 3; ++k) {
    if (std::abs(d[k]) < 1e-12) {
      if (o[k] < b.lo[k] || o[k] > b.hi[k]) return false;
      continue;
    }
    double a = (b.lo[k] - o[k]) / d[k];
    double c = (b.hi[k] - o[k]) / d[k];
    if (a > c) std::swap(a, c);
    lo = std::max(lo, a);
    hi = std::min(hi, c);
  }
  *t0 = lo;
  *t1 = hi;
  return hi > lo;
}

// Double-precision copies and pixel lists derived from a frame once.
struct FrameAux {
  bool ready = false;
  Image<double> image;
  Image<double> depth;
  Image<uint8_t> inv_mask;
  std::vector<std::pair<int, int>> px;  // masked (x, y)
};

// Splat-render guidance for one frame, reused across the rays of an SDF
// phase (splats are frozen while the SDF trains).
struct GuideCache {
  GuidedDepth gd;
  VecX<double> splat_abs_sdf;  // |sdf| at each posed splat center
};

struct Trainer {
  const Dataset& ds;
  const TrainConfig& cfg;
  RasterizeConfig rc;

  Rng rng_init, rng_sdf_init, rng_g, rng_s, rng_d, rng_bg;

  Scaffold scaffold;
  GaussianSet<double> gs;
  MotionBasis<double> mb;
  SdfModel<double> sdf;

  Adam<double> opt_g, opt_s;
  std::vector<ParamRef<double>> sdf_params;
  double scene_extent = 1.0;

  std::vector<FrameAux> aux_store;
  std::vector<int> train_frames;   // frame indices eligible for training
  std::vector<int> window_frames;  // canonical-window frames for init
  Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>
      rigid_nn;
  std::map<int, int> track_gauss;  // track id -> splat index
  std::vector<std::vector<std::pair<int, std::pair<float, float>>>>
      track_obs_by_t;  // per timestep: (track id, (u, v))

  int64_t g_done = 0, s_done = 0;
  int64_t total_sdf_planned = 1;
  int last_gauss_t = -1;
  Checkpoint last_good;
  TrainResult res;

  // Fixed-id forks so each concern owns an independent stream. A
  // mechanism that is toggled off therefore cannot shift the draws of
  // one that stays on.
  Trainer(const Dataset& ds_in, const TrainConfig& cfg_in)
      : ds(ds_in),
        cfg(cfg_in),
        rng_init(Rng(cfg.seed).fork(0)),
        rng_sdf_init(Rng(cfg.seed).fork(1)),
        rng_g(Rng(cfg.seed).fork(2)),
        rng_s(Rng(cfg.seed).fork(3)),
        rng_d(Rng(cfg.seed).fork(4)),
        rng_bg(Rng(cfg.seed).fork(5)) {}

  FrameAux& aux(int fi) {
    FrameAux& a = aux_store[fi];
    if (a.ready) return a;
    const FrameRecord& fr = ds.frames[fi];
    a.image = image_cast<double>(fr.image_f);
    a.depth = image_cast<double>(fr.depth);
    a.inv_mask = Image<uint8_t>(fr.mask.height, fr.mask.width, 1, 1);
    for (int y = 0; y < fr.mask.height; ++y)
      for (int x = 0; x < fr.mask.width; ++x) {
        if (fr.mask.at(y, x) != 0) {
          a.inv_mask.at(y, x) = 0;
          a.px.emplace_back(x, y);
        }
      }
    a.ready = true;
    return a;
  }

  void build_frame_pools() {
    for (size_t i = 0; i < ds.frames.size(); ++i) {
      const FrameRecord& fr = ds.frames[i];
      const bool held_out =
          cfg.holdout_every > 0 && fr.time_index % cfg.holdout_every == 0;
      if (!held_out) train_frames.push_back(static_cast<int>(i));
      if (fr.time_index >= ds.canonical_t &&
          fr.time_index < ds.canonical_t + cfg.scaffold_window)
        window_frames.push_back(static_cast<int>(i));
    }
    if (train_frames.empty())
      throw SpecError("train: holdout leaves no training frames");
    if (window_frames.empty())
      throw SpecError("train: canonical window has no frames");
  }

  void build_track_index() {
    track_obs_by_t.assign(ds.num_timesteps, {});
    for (const auto& [tid, pts] : ds.tracks.tracks) {
      for (const TrackPoint& p : pts) {
        if (!p.visible) continue;
        const int t = ds.time_index_of_raw(p.t_raw);
        if (t >= 0) track_obs_by_t[t].emplace_back(
            tid, std::make_pair(p.u, p.v));
      }
    }
  }

  /// Binds every track to the splat nearest its canonical-frame
  /// back-projection. Rerun whenever splats are added or removed.
  void rebind_tracks() {
    track_gauss.clear();
    const FrameRecord* cf = ds.primary_frame(ds.canonical_t);
    if (!cf || gs.size() == 0) return;
    const CameraModel& cam = ds.camera(cf->camera_id);
    const RigidTransform c2w = cf->extr.inverse();
    std::vector<int> tids;
    std::vector<Vec3<double>> anchors;
    for (const auto& [tid, pts] : ds.tracks.tracks) {
      for (const TrackPoint& p : pts) {
        if (ds.time_index_of_raw(p.t_raw) != ds.canonical_t || !p.visible)
          continue;
        if (!cf->mask_at(p.u, p.v)) break;
        const double d = track_depth(*cf, p.u, p.v);
        if (!(d > 0)) break;
        tids.push_back(tid);
        anchors.push_back(c2w.apply(backproject(cam, p.u, p.v, d)));
        break;
      }
    }
    if (tids.empty()) return;
    MatX3<double> q(static_cast<int>(anchors.size()), 3);
    for (size_t i = 0; i < anchors.size(); ++i)
      q.row(static_cast<int>(i)) = anchors[i].transpose();
    const KnnResult<double> nn = knn_search_points(gs.means, q, 1);
    for (size_t i = 0; i < tids.size(); ++i)
      track_gauss[tids[i]] = nn.idx(static_cast<int>(i), 0);
  }

  void recompute_rigid_nn() {
    const int k = std::min(cfg.rigid_k, gs.size() - 1);
    rigid_nn = knn_search(gs.means, std::max(0, k)).idx;
  }

  std::vector<TrackObs<double>> obs_at(int t, const FrameRecord& pf) {
    std::vector<TrackObs<double>> obs;
    for (const auto& [tid, uv] : track_obs_by_t[t]) {
      auto it = track_gauss.find(tid);
      if (it == track_gauss.end()) continue;
      if (!pf.mask_at(uv.first, uv.second)) continue;
      TrackObs<double> o;
      o.gauss = it->second;
      o.u = uv.first;
      o.v = uv.second;
      const double d = track_depth(pf, uv.first, uv.second);
      o.has_depth = d > 0;
      o.depth = d;
      obs.push_back(o);
    }
    return obs;
  }

  std::vector<ParamRef<double>> gauss_params() {
    std::vector<ParamRef<double>> p;
    p.push_back({gs.means.data(), gs.means.size(), "means"});
    p.push_back({gs.quats.data(), gs.quats.size(), "quats"});
    p.push_back({gs.log_scales.data(), gs.log_scales.size(), "log_scales"});
    p.push_back({gs.opacities.data(), gs.opacities.size(), "opacities"});
    p.push_back({gs.colors.data(), gs.colors.size(), "colors"});
    for (int j = 0; j < mb.num_bases(); ++j)
      p.push_back({mb.basis_mu[j].data(), mb.basis_mu[j].size(),
                   "basis_mu" + std::to_string(j)});
    for (int j = 0; j < mb.num_bases(); ++j)
      p.push_back({mb.basis_rot[j].data(), mb.basis_rot[j].size(),
                   "basis_rot" + std::to_string(j)});
    p.push_back({mb.coeffs.data(), mb.coeffs.size(), "coeffs"});
    return p;
  }

  std::vector<ParamRef<double>> gauss_grads(GaussianGrads<double>& g,
                                            MotionGrads<double>& m) {
    std::vector<ParamRef<double>> p;
    p.push_back({g.means.data(), g.means.size(), "means"});
    p.push_back({g.quats.data(), g.quats.size(), "quats"});
    p.push_back({g.log_scales.data(), g.log_scales.size(), "log_scales"});
    p.push_back({g.opacities.data(), g.opacities.size(), "opacities"});
    p.push_back({g.colors.data(), g.colors.size(), "colors"});
    for (int j = 0; j < mb.num_bases(); ++j)
      p.push_back({m.basis_mu[j].data(), m.basis_mu[j].size(), ""});
    for (int j = 0; j < mb.num_bases(); ++j)
      p.push_back({m.basis_rot[j].data(), m.basis_rot[j].size(), ""});
    p.push_back({m.coeffs.data(), m.coeffs.size(), "coeffs"});
    return p;
  }

  std::vector<double> gauss_lrs() {
    std::vector<double> lr;
    lr.push_back(cfg.lr_means * scene_extent);
    lr.push_back(cfg.lr_quats);
    lr.push_back(cfg.lr_log_scales);
    lr.push_back(cfg.lr_opacities);
    lr.push_back(cfg.lr_colors);
    for (int j = 0; j < mb.num_bases(); ++j)
      lr.push_back(cfg.lr_basis_mu * scene_extent);
    for (int j = 0; j < mb.num_bases(); ++j) lr.push_back(cfg.lr_basis_rot);
    lr.push_back(cfg.lr_coeffs);
    return lr;
  }

  void renormalize_quats() {
    for (int i = 0; i < gs.size(); ++i) {
      const double n = gs.quats.row(i).norm();
      if (n > 1e-12)
        gs.quats.row(i) /= n;
      else
        gs.quats.row(i) << 1, 0, 0, 0;
    }
  }

  Checkpoint snapshot() {
    Checkpoint ck;
    ck.meta.canonical_t = ds.canonical_t;
    ck.meta.num_timesteps = ds.num_timesteps;
    ck.meta.seed = cfg.seed;
    ck.meta.span = scaffold.span;
    ck.gs = gs;
    ck.mb = mb;
    ck.has_sdf = true;
    ck.sdf = sdf;
    return ck;
  }

  // ---- Gaussian side -------------------------------------------------

  void gauss_step(const char* phase, bool joint) {
    const std::vector<int>& pool = joint ? train_frames : window_frames;
    const int fi = pool[static_cast<size_t>(
        rng_g.uniform_int(static_cast<int64_t>(pool.size())))];
    const FrameRecord& fr = ds.frames[fi];
    const FrameAux& a = aux(fi);
    const CameraModel& cam = ds.camera(fr.camera_id);
    const int t = fr.time_index;
    last_gauss_t = t;

    const PosedGaussians<double> posed = pose_at(gs, mb, t);
    RasterCache<double> cache;
    rasterize(posed.means, posed.quats, gs.log_scales, gs.opacities,
              gs.colors, cam, fr.extr, rc, &cache);
    const RenderOutput<double>& render = cache.out;

    GaussLossRow row;
    row.iter = g_done;
    row.phase = phase;

    Image<double> image_bar(cam.height, cam.width, 3, 0.0);
    Image<double> depth_bar(cam.height, cam.width, 1, 0.0);
    Image<double> alpha_bar(cam.height, cam.width, 1, 0.0);

    if (joint) {
      const FrameLossValues<double> fl =
          frame_losses(render, a.image, a.depth, fr.mask);
      row.img = fl.img;
      row.depth = fl.depth;
      row.mask = fl.mask;
      FrameLossValues<double> fw;
      fw.img = cfg.w_img;
      fw.depth = cfg.w_depth;
      fw.mask = cfg.w_mask;
      frame_losses_backward(render, a.image, a.depth, fr.mask, fw, image_bar,
                            depth_bar, alpha_bar);
    }
    // Photometric L1 + structural term; sole objective during init.
    const double w_photo = joint ? cfg.w_l1ssim : 1.0;
    if (w_photo > 0) {
      Image<double> photo_bar(cam.height, cam.width, 3, 0.0);
      const InitLossValue<double> lv =
          init_loss_gs(render.image, a.image, fr.mask, &photo_bar);
      row.l1ssim = lv.value;
      for (int64_t i = 0; i < photo_bar.size(); ++i)
        image_bar.data[i] += w_photo * photo_bar.data[i];
    }

    GaussianGrads<double> gg = GaussianGrads<double>::zeros(gs.size());
    MotionGrads<double> mg =
        MotionGrads<double>::zeros(mb.num_bases(), mb.num_frames, gs.size());

    if (joint) {
      const FrameRecord* pf = ds.primary_frame(t);
      if (pf) {
        const std::vector<TrackObs<double>> obs = obs_at(t, *pf);
        const CameraModel& pcam = ds.camera(pf->camera_id);
        const MotionLossValues<double> ml = motion_losses(
            gs, mb, t, ds.canonical_t, rigid_nn, obs, pcam, pf->extr);
        row.track = ml.no_tracks ? 0.0 : ml.track;
        row.rigid = ml.rigid;
        row.sparse = ml.sparse;
        MotionLossValues<double> mw;
        mw.track = cfg.w_track;
        mw.rigid = cfg.w_rigid;
        mw.sparse = cfg.w_sparse;
        motion_losses_backward(gs, mb, t, ds.canonical_t, rigid_nn, obs, pcam,
                               pf->extr, mw, gg, mg);
      }
    }

    row.total = cfg.w_img * row.img + w_photo * row.l1ssim +
                cfg.w_depth * row.depth + cfg.w_mask * row.mask +
                cfg.w_track * row.track + cfg.w_rigid * row.rigid +
                cfg.w_sparse * row.sparse;
    check_finite(row.total, "gaussian", g_done);

    const RasterGrads<double> rg = rasterize_backward(
        cache, posed.means, posed.quats, gs.log_scales, gs.opacities,
        gs.colors, cam, fr.extr, rc, image_bar, depth_bar, alpha_bar);
    pose_at_backward(gs, mb, t, posed, rg.means, rg.quats, gg, mg);
    gg.log_scales += rg.log_scales;
    gg.opacities += rg.opacities;
    gg.colors += rg.colors;

    auto params = gauss_params();
    auto grads = gauss_grads(gg, mg);
    opt_g.step(params, grads, gauss_lrs());
    renormalize_quats();
    res.gauss_rows.push_back(std::move(row));
  }

  /// Structural maintenance at the densify/prune cadence. Resets the
  /// Gaussian optimizer state when the splat count changes because
  /// moment buffers no longer line up row-for-row.
  void densify_prune(int t) {
    const int max_new = cfg.max_gaussians - gs.size();
    const int added = densify(gs, mb, sdf, ds, t, cfg.guidance, rc, g_done,
                              max_new, rng_d, &res.events);
    const int removed =
        prune(gs, mb, sdf, t, cfg.guidance, g_done, &res.events);
    if (added > 0 || removed > 0) {
      renormalize_quats();  // statistical spawns are not unit length
      opt_g.reset();
      opt_g.init(gauss_params());
      recompute_rigid_nn();
      rebind_tracks();
    }
  }

  // ---- SDF side ------------------------------------------------------

  RaySampleBatch<double> build_batch(const FrameRecord& fr,
                                     const FrameAux& a,
                                     const CameraModel& cam,
                                     const GuideCache* guide) {
    const RigidTransform c2w = fr.extr.inverse();
    const Vec3<double> origin = c2w.apply(Vec3<double>::Zero());
    const double floor_width = 4.0 * sdf.grid.finest_voxel();

    const int want = cfg.rays_per_batch;
    std::vector<Vec3<double>> dirs;
    std::vector<std::array<double, 2>> spans;
    std::vector<Vec3<double>> rgbs;
    std::vector<double> tdepths;
    const int npx = static_cast<int>(a.px.size());
    for (int attempt = 0;
         static_cast<int>(dirs.size()) < want && attempt < 20 * want;
         ++attempt) {
      const auto [x, y] = a.px[static_cast<size_t>(rng_s.uniform_int(npx))];
      const Vec3<double> dir_cam((x - cam.cx) / cam.fx, (y - cam.cy) / cam.fy,
                                 1.0);
      const double nf = dir_cam.norm();
      const Vec3<double> dir = c2w.R * (dir_cam / nf);
      double t0, t1;
      if (!ray_box(sdf.world_box, origin, dir, &t0, &t1)) continue;
      double lo = std::max(t0, 1e-4), hi = t1;
      if (!(hi - lo > 1e-6)) continue;
      if (guide) {
        const double alpha = guide->gd.alpha.at(y, x);
        const double z = guide->gd.depth.at(y, x);
        const int first = guide->gd.first_splat(y, x);
        const double abs_s = first >= 0 ? guide->splat_abs_sdf[first] : 0.0;
        const DepthInterval di = sample_range(z * nf, abs_s, alpha, lo, hi,
                                              floor_width, cfg.guidance);
        lo = di.near;
        hi = di.far;
        if (!(hi - lo > 1e-6)) continue;
      }
      dirs.push_back(dir);
      spans.push_back({lo, hi});
      rgbs.push_back(Vec3<double>(a.image.at(y, x, 0), a.image.at(y, x, 1),
                                  a.image.at(y, x, 2)));
      const double z = a.depth.at(y, x);
      tdepths.push_back(z > 0 ? z * nf : -1.0);
    }
    const int r = static_cast<int>(dirs.size());
    if (r == 0)
      throw SpecError("train: no valid rays through the masked region");

    RaySampleBatch<double> b;
    b.origins = origin.transpose().replicate(r, 1);
    b.dirs.resize(r, 3);
    b.depths.resize(r, cfg.samples_per_ray);
    b.target_rgb.resize(r, 3);
    b.target_depth.resize(r);
    b.mask_w = VecX<double>::Ones(r);
    for (int i = 0; i < r; ++i) {
      b.dirs.row(i) = dirs[i].transpose();
      b.target_rgb.row(i) = rgbs[i].transpose();
      b.target_depth[i] = tdepths[i];
      const double lo = spans[i][0], width = spans[i][1] - spans[i][0];
      const int m = cfg.samples_per_ray;
      for (int j = 0; j < m; ++j)
        b.depths(i, j) = lo + width * (j + rng_s.uniform()) / m;
    }
    return b;
  }

  void sdf_step(const char* phase, const std::map<int, GuideCache>* guides) {
    const int fi = train_frames[static_cast<size_t>(
        rng_s.uniform_int(static_cast<int64_t>(train_frames.size())))];
    const FrameRecord& fr = ds.frames[fi];
    const FrameAux& a = aux(fi);
    const CameraModel& cam = ds.camera(fr.camera_id);
    const int t = fr.time_index;

    const GuideCache* guide = nullptr;
    if (guides) {
      auto it = guides->find(fi);
      if (it != guides->end()) guide = &it->second;
    }
    const RaySampleBatch<double> batch = build_batch(fr, a, cam, guide);

    // Surface points for the smoothness term, jittered by one voxel.
    const SdfTrunc<double> trunc =
        SdfTrunc<double>::from_grid(sdf.grid, cfg.sdf_eps_override);
    std::vector<int> surf_rays;
    for (int i = 0; i < batch.num_rays() &&
                    static_cast<int>(surf_rays.size()) <
                        cfg.surf_points_per_batch;
         ++i)
      if (batch.target_depth[i] > 0) surf_rays.push_back(i);
    MatXR<double> surf(static_cast<int>(surf_rays.size()), 3);
    MatXR<double> delta(static_cast<int>(surf_rays.size()), 3);
    for (size_t i = 0; i < surf_rays.size(); ++i) {
      const int ray = surf_rays[i];
      surf.row(static_cast<int>(i)) =
          batch.origins.row(ray) +
          batch.target_depth[ray] * batch.dirs.row(ray);
      for (int k = 0; k < 3; ++k)
        delta(static_cast<int>(i), k) = trunc.delta_std * rng_s.normal();
    }

    const double progress =
        double(s_done) / double(std::max<int64_t>(1, total_sdf_planned - 1));
    SdfLossWeights<double> w;
    w.rgb = schedule_decay(cfg.w_sdf_rgb_start, cfg.w_sdf_rgb_end, progress);
    w.sm = schedule_decay(cfg.w_sdf_sm_start, cfg.w_sdf_sm_end, progress);
    w.d = cfg.w_sdf_d;
    w.sdf = cfg.w_sdf_sdf;
    w.fs = cfg.w_sdf_fs;
    w.eik = cfg.w_sdf_eik;

    const int active = progressive_unlock(s_done, sdf.grid.levels());
    SdfGrads<double> g = SdfGrads<double>::zeros_like(sdf);
    const SdfLossBreakdown<double> l =
        sdf_losses(sdf, batch, t, active, surf, delta, trunc, &w, &g);

    SdfLossRow row;
    row.iter = s_done;
    row.phase = phase;
    row.rgb = l.rgb;
    row.d = l.d;
    row.sdf = l.sdf;
    row.fs = l.fs;
    row.eik = l.eik;
    row.sm = l.sm;
    row.total = w.rgb * l.rgb + w.d * l.d + w.sdf * l.sdf + w.fs * l.fs +
                w.eik * l.eik + w.sm * l.sm;
    check_finite(row.total, "sdf", s_done);

    auto grads = collect_grads(g);
    opt_s.step(sdf_params, grads, cfg.sdf_lr);
    ++s_done;
    res.sdf_rows.push_back(std::move(row));
  }

  /// Renders guidance for every training frame the SDF phase may draw,
  /// from the splats as they stand at the start of the phase.
  std::map<int, GuideCache> build_guides() {
    std::map<int, GuideCache> guides;
    for (int fi : train_frames) {
      const FrameRecord& fr = ds.frames[fi];
      const CameraModel& cam = ds.camera(fr.camera_id);
      GuideCache gc;
      gc.gd = guided_depth_map(gs, mb, fr.time_index, cam, fr.extr, rc);
      const PosedGaussians<double> posed = pose_at(gs, mb, fr.time_index);
      gc.splat_abs_sdf =
          sdf_extended(sdf, MatXR<double>(posed.means), fr.time_index)
              .cwiseAbs();
      guides.emplace(fi, std::move(gc));
    }
    return guides;
  }

  // ---- Background ----------------------------------------------------

  void train_background() {
    std::vector<Vec3<double>> pts;
    std::vector<Vec3<double>> cols;
    const int fstep =
        std::max<int>(1, static_cast<int>(ds.frames.size()) / 8);
    int px_budget = cfg.background_points;
    for (size_t fi = 0; fi < ds.frames.size() && px_budget > 0; fi += fstep) {
      const FrameRecord& fr = ds.frames[fi];
      const CameraModel& cam = ds.camera(fr.camera_id);
      const RigidTransform c2w = fr.extr.inverse();
      const int stride = std::max(
          1, static_cast<int>(std::sqrt(double(fr.mask.height) *
                                        fr.mask.width /
                                        std::max(1, cfg.background_points /
                                                        4))));
      for (int y = 0; y < fr.mask.height; y += stride) {
        for (int x = 0; x < fr.mask.width; x += stride) {
          if (fr.mask.at(y, x) != 0) continue;
          const double z = fr.depth.at(y, x);
          if (!(z > 0)) continue;
          pts.push_back(c2w.apply(backproject(cam, x, y, z)));
          cols.push_back(Vec3<double>(fr.image_f.at(y, x, 0),
                                      fr.image_f.at(y, x, 1),
                                      fr.image_f.at(y, x, 2)));
          if (--px_budget <= 0) break;
        }
        if (px_budget <= 0) break;
      }
    }
    if (pts.size() < 4) return;

    const int n = static_cast<int>(pts.size());
    GaussianSet<double> bg = GaussianSet<double>::zeros(n);
    for (int i = 0; i < n; ++i) {
      bg.means.row(i) = pts[i].transpose();
      bg.colors.row(i) = cols[i].transpose();
      bg.opacities[i] = 0.1;
    }
    const KnnResult<double> nn = knn_search(bg.means, 3);
    for (int i = 0; i < n; ++i) {
      double d = nn.k() > 0 ? nn.dist.row(i).mean() : 1e-2;
      bg.log_scales.row(i).setConstant(std::log(std::max(d, 1e-9)));
    }
    const Box3<double> bbox{bg.means.colwise().minCoeff().transpose(),
                            bg.means.colwise().maxCoeff().transpose()};
    const double bext = std::max(1e-3, bbox.extent().maxCoeff());

    std::vector<ParamRef<double>> params = {
        {bg.means.data(), bg.means.size(), "means"},
        {bg.quats.data(), bg.quats.size(), "quats"},
        {bg.log_scales.data(), bg.log_scales.size(), "log_scales"},
        {bg.opacities.data(), bg.opacities.size(), "opacities"},
        {bg.colors.data(), bg.colors.size(), "colors"}};
    const std::vector<double> lrs = {cfg.lr_means * bext, cfg.lr_quats,
                                     cfg.lr_log_scales, cfg.lr_opacities,
                                     cfg.lr_colors};
    Adam<double> opt;
    opt.init(params);
    for (int it = 0; it < cfg.background_iters; ++it) {
      const int fi = static_cast<int>(
          rng_bg.uniform_int(static_cast<int64_t>(ds.frames.size())));
      const FrameRecord& fr = ds.frames[fi];
      const FrameAux& a = aux(fi);
      const CameraModel& cam = ds.camera(fr.camera_id);
      RasterCache<double> cache;
      rasterize(bg.means, bg.quats, bg.log_scales, bg.opacities, bg.colors,
                cam, fr.extr, rc, &cache);
      Image<double> bar(cam.height, cam.width, 3, 0.0);
      const InitLossValue<double> lv =
          init_loss_gs(cache.out.image, a.image, a.inv_mask, &bar);
      if (lv.empty_mask) continue;
      check_finite(lv.value, "background", it);
      Image<double> zero1(cam.height, cam.width, 1, 0.0);
      RasterGrads<double> rg = rasterize_backward(
          cache, bg.means, bg.quats, bg.log_scales, bg.opacities, bg.colors,
          cam, fr.extr, rc, bar, zero1, zero1);
      std::vector<ParamRef<double>> grads = {
          {rg.means.data(), rg.means.size(), ""},
          {rg.quats.data(), rg.quats.size(), ""},
          {rg.log_scales.data(), rg.log_scales.size(), ""},
          {rg.opacities.data(), rg.opacities.size(), ""},
          {rg.colors.data(), rg.colors.size(), ""}};
      opt.step(params, grads, lrs);
      for (int i = 0; i < n; ++i) {
        const double nq = bg.quats.row(i).norm();
        if (nq > 1e-12) bg.quats.row(i) /= nq;
      }
    }
    res.ckpt.has_background = true;
    res.ckpt.background = std::move(bg);
  }

  // ---- Run -----------------------------------------------------------

  TrainResult run() {
    cfg.validate();
    if (ds.frames.empty()) throw SpecError("train: dataset has no frames");
    aux_store.resize(ds.frames.size());
    build_frame_pools();
    build_track_index();

    ScaffoldConfig scfg;
    scfg.window = cfg.scaffold_window;
    scfg.finest_res = cfg.sdf_grid_res.back();
    scfg.max_points = cfg.scaffold_max_points;
    scaffold = build_scaffold(ds, scfg);
    init_gaussians(scaffold, cfg.bases, ds.num_timesteps, rng_init, &gs, &mb);
    scene_extent = scaffold.span.extent().maxCoeff();

    SdfArch arch;
    arch.grid_res = cfg.sdf_grid_res;
    arch.grid_feat = cfg.sdf_grid_feat;
    arch.def_depth = cfg.sdf_def_depth;
    arch.def_width = cfg.sdf_def_width;
    arch.hyp_depth = cfg.sdf_hyp_depth;
    arch.hyp_width = cfg.sdf_hyp_width;
    arch.sdf_depth = cfg.sdf_head_depth;
    arch.sdf_width = cfg.sdf_head_width;
    arch.rgb_depth = cfg.sdf_head_depth;
    arch.rgb_width = cfg.sdf_head_width;
    arch.latent_dim = cfg.sdf_latent_dim;
    arch.pretrain_iters = cfg.sdf_pretrain_iters;
    Box3<double> wbox = compute_world_box(ds);
    wbox.lo = wbox.lo.cwiseMin(scaffold.span.lo);
    wbox.hi = wbox.hi.cwiseMax(scaffold.span.hi);
    sdf = make_sdf_model(arch, scaffold.span, wbox, ds.num_timesteps,
                         rng_sdf_init);

    opt_g.init(gauss_params());
    sdf_params = collect_params(sdf);
    opt_s.init(sdf_params);
    recompute_rigid_nn();
    rebind_tracks();

    const int64_t cycles =
        cfg.gauss_phase > 0
            ? (cfg.total_gauss_iters + cfg.gauss_phase - 1) / cfg.gauss_phase
            : 0;
    total_sdf_planned = cfg.init_sdf_iters + cycles * cfg.sdf_phase;

    {
      ordered_json j;
      j["seed"] = cfg.seed;
      j["sg4gp"] = cfg.sg4gp;
      j["gps4s"] = cfg.gps4s;
      j["n_grid"] = cfg.guidance.n_grid;
      j["tau_s"] = cfg.guidance.tau_s;
      j["tau_n"] = cfg.guidance.tau_n;
      j["tau_pr"] = cfg.guidance.tau_pr;
      j["gamma_samp"] = cfg.guidance.gamma_samp;
      j["gamma_pr"] = cfg.guidance.gamma_pr;
      j["k_nn"] = cfg.guidance.k_nn;
      j["prune_window"] = cfg.guidance.prune_window;
      j["total_gauss_iters"] = cfg.total_gauss_iters;
      j["gauss_phase"] = cfg.gauss_phase;
      j["sdf_phase"] = cfg.sdf_phase;
      j["bases"] = cfg.bases;
      TrainEvent ev;
      ev.iter = 0;
      ev.op = "config";
      ev.extra = j.dump();
      res.events.push_back(std::move(ev));
    }

    last_good = snapshot();
    try {
      // Initialization phase: photometric fit on the canonical window,
      // then the SDF trained alone with full-range sampling.
      for (int it = 0; it < cfg.init_gauss_iters; ++it) {
        gauss_step("init", /*joint=*/false);
        ++g_done;
      }
      g_done = 0;  // the joint budget starts counting here
      for (int it = 0; it < cfg.init_sdf_iters; ++it)
        sdf_step("init", nullptr);
      last_good = snapshot();

      const int64_t densify_stop = static_cast<int64_t>(
          cfg.densify_stop_frac * double(cfg.total_gauss_iters));
      while (g_done < cfg.total_gauss_iters) {
        for (int it = 0;
             it < cfg.gauss_phase && g_done < cfg.total_gauss_iters; ++it) {
          gauss_step("joint", /*joint=*/true);
          ++g_done;
          // Structural maintenance runs at the timestep just trained on.
          if (cfg.sg4gp && g_done >= cfg.densify_start &&
              g_done <= densify_stop && cfg.densify_every > 0 &&
              g_done % cfg.densify_every == 0)
            densify_prune(last_gauss_t);
        }
        last_good = snapshot();
        if (cfg.sdf_phase > 0) {
          const std::map<int, GuideCache> guides =
              cfg.gps4s ? build_guides() : std::map<int, GuideCache>();
          for (int it = 0; it < cfg.sdf_phase; ++it)
            sdf_step("joint", cfg.gps4s ? &guides : nullptr);
          last_good = snapshot();
        }
      }

      res.ckpt = snapshot();
      if (cfg.background_iters > 0) train_background();
    } catch (const Abort& a) {
      res.aborted = true;
      res.abort_reason = a.reason;
      res.ckpt = last_good;
    }
    return res;
  }
};

}  // namespace

Box3<double> compute_world_box(const Dataset& ds) {
  Box3<double> box;
  bool any = false;
  const auto extend = [&](const Vec3<double>& p) {
    if (!any) {
      box.lo = p;
      box.hi = p;
      any = true;
    } else {
      box.lo = box.lo.cwiseMin(p);
      box.hi = box.hi.cwiseMax(p);
    }
  };
  for (const FrameRecord& fr : ds.frames) {
    const CameraModel& cam = ds.camera(fr.camera_id);
    const RigidTransform c2w = fr.extr.inverse();
    for (int y = 0; y < fr.mask.height; y += 4) {
      for (int x = 0; x < fr.mask.width; x += 4) {
        if (fr.mask.at(y, x) == 0) continue;
        const double z = fr.depth.at(y, x);
        if (!(z > 0)) continue;
        extend(c2w.apply(backproject(cam, x, y, z)));
      }
    }
    for (const Vec3d& p : fr.lidar) extend(p);
  }
  if (!any)
    throw SpecError("world box: no masked depth observations in dataset");
  return box.expanded(0.05);
}

TrainResult train(const Dataset& ds, const TrainConfig& cfg) {
  Trainer tr(ds, cfg);
  return tr.run();
}

void write_event_log(const std::string& path,
                     const std::vector<TrainEvent>& events) {
  std::ofstream out(path);
  if (!out) throw IoError("event log: cannot write " + path);
  for (const TrainEvent& ev : events) out << event_to_json(ev) << "\n";
  if (!out) throw IoError("event log: write failed for " + path);
}

namespace {

std::string fmt(double v) {
  std::ostringstream ss;
  ss.precision(10);
  ss << v;
  return ss.str();
}

}  // namespace

void write_gauss_loss_csv(const std::string& path,
                          const std::vector<GaussLossRow>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("loss csv: cannot write " + path);
  out << "iter,phase,img,l1ssim,depth,mask,track,rigid,sparse,total\n";
  for (const GaussLossRow& r : rows)
    out << r.iter << "," << r.phase << "," << fmt(r.img) << ","
        << fmt(r.l1ssim) << "," << fmt(r.depth) << "," << fmt(r.mask) << ","
        << fmt(r.track) << "," << fmt(r.rigid) << "," << fmt(r.sparse) << ","
        << fmt(r.total) << "\n";
}

void write_sdf_loss_csv(const std::string& path,
                        const std::vector<SdfLossRow>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("loss csv: cannot write " + path);
  out << "iter,phase,rgb,depth,sdf,free,eik,smooth,total\n";
  for (const SdfLossRow& r : rows)
    out << r.iter << "," << r.phase << "," << fmt(r.rgb) << "," << fmt(r.d)
        << "," << fmt(r.sdf) << "," << fmt(r.fs) << "," << fmt(r.eik) << ","
        << fmt(r.sm) << "," << fmt(r.total) << "\n";
}

}  // namespace sdfsplat
