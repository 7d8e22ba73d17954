// Copyright Contributors to the sdfsplat Project
// SPDX-License-Identifier: Apache-2.0

#include "sdfsplat/scaffold.hpp"

#include <Eigen/SVD>

#include <cstdio>
#include <unordered_map>

namespace sdfsplat {

RigidTransform umeyama_rigid(const MatXR<double>& src,
                             const MatXR<double>& dst) {
  if (src.rows() != dst.rows() || src.rows() < 3)
    throw SpecError("rigid fit needs >= 3 paired points, got " +
                    std::to_string(src.rows()));
  const Vec3d cs = src.colwise().mean().transpose();
  const Vec3d cd = dst.colwise().mean().transpose();
  Mat3d h = Mat3d::Zero();
  for (int i = 0; i < src.rows(); ++i)
    h += (src.row(i).transpose() - cs) * (dst.row(i) - cd.transpose());
  Eigen::JacobiSVD<Mat3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3d r = svd.matrixV() * svd.matrixU().transpose();
  if (r.determinant() < 0) {
    Mat3d v = svd.matrixV();
    v.col(2) *= -1.0;
    r = v * svd.matrixU().transpose();
  }
  return RigidTransform{r, cd - r * cs};
}

bool fit_rigid_ransac(const MatXR<double>& src, const MatXR<double>& dst,
                      double threshold, int trials, Rng& rng,
                      RigidTransform* out, int* inliers) {
  const int n = static_cast<int>(src.rows());
  if (n < 3 || dst.rows() != n) return false;

  auto count_inliers = [&](const RigidTransform& w, std::vector<char>* mask) {
    int c = 0;
    if (mask) mask->assign(n, 0);
    for (int i = 0; i < n; ++i) {
      const double err =
          (dst.row(i).transpose() - w.apply(src.row(i).transpose())).norm();
      if (err <= threshold) {
        ++c;
        if (mask) (*mask)[i] = 1;
      }
    }
    return c;
  };

  int best_count = 0;
  std::vector<char> best_mask;
  for (int trial = 0; trial < trials; ++trial) {
    int a = static_cast<int>(rng.uniform_int(n));
    int b = static_cast<int>(rng.uniform_int(n));
    int c = static_cast<int>(rng.uniform_int(n));
    if (a == b || a == c || b == c) continue;
    const Vec3d e1 = (src.row(b) - src.row(a)).transpose();
    const Vec3d e2 = (src.row(c) - src.row(a)).transpose();
    // Collinear triples pin down no rotation; skip them.
    if (e1.cross(e2).norm() < 1e-9 * e1.norm() * e2.norm()) continue;
    MatXR<double> s3(3, 3), d3(3, 3);
    s3 << src.row(a), src.row(b), src.row(c);
    d3 << dst.row(a), dst.row(b), dst.row(c);
    const RigidTransform w = umeyama_rigid(s3, d3);
    std::vector<char> mask;
    const int cnt = count_inliers(w, &mask);
    if (cnt > best_count) {
      best_count = cnt;
      best_mask = std::move(mask);
    }
  }
  if (best_count < 3) return false;

  MatXR<double> si(best_count, 3), di(best_count, 3);
  int j = 0;
  for (int i = 0; i < n; ++i) {
    if (!best_mask[i]) continue;
    si.row(j) = src.row(i);
    di.row(j) = dst.row(i);
    ++j;
  }
  const RigidTransform refined = umeyama_rigid(si, di);
  if (out) *out = refined;
  if (inliers) *inliers = count_inliers(refined, nullptr);
  return true;
}

double track_depth(const FrameRecord& fr, double u, double v) {
  const int x0 = static_cast<int>(std::floor(u));
  const int y0 = static_cast<int>(std::floor(v));
  if (x0 >= 0 && y0 >= 0 && x0 + 1 < fr.depth.width &&
      y0 + 1 < fr.depth.height) {
    bool ok = true;
    double d[4];
    for (int i = 0; i < 4; ++i) {
      const int x = x0 + (i & 1), y = y0 + (i >> 1);
      d[i] = fr.depth.at(y, x);
      ok = ok && fr.mask.at(y, x) != 0 && d[i] > 0.0;
    }
    if (ok) {
      const double fx = u - x0, fy = v - y0;
      return (d[0] * (1 - fx) + d[1] * fx) * (1 - fy) +
             (d[2] * (1 - fx) + d[3] * fx) * fy;
    }
  }
  return fr.depth_at(u, v);
}

namespace {

struct CloudBuilder {
  std::vector<Vec3d> pts;
  std::vector<Vec3d> cols;
  std::vector<Scaffold::Source> src;

  void add(const Vec3d& p, const Vec3d& c, const Scaffold::Source& s) {
    pts.push_back(p);
    cols.push_back(c);
    src.push_back(s);
  }
};

/// Lifts every masked pixel with valid depth into world space, and any
/// LiDAR points that fall inside the mask, optionally warping the result.
void lift_frame(const FrameRecord& fr, const CameraModel& cam,
                const RigidTransform* warp, CloudBuilder* out) {
  auto emit = [&](const Vec3d& world, double u, double v) {
    const int x = static_cast<int>(u + 0.5), y = static_cast<int>(v + 0.5);
    Vec3d color(fr.image_f.at(y, x, 0), fr.image_f.at(y, x, 1),
                fr.image_f.at(y, x, 2));
    const Vec3d p = warp ? warp->apply(world) : world;
    out->add(p, color,
             {fr.time_index, fr.camera_id, static_cast<float>(u),
              static_cast<float>(v)});
  };
  for (int y = 0; y < fr.mask.height; ++y)
    for (int x = 0; x < fr.mask.width; ++x) {
      if (fr.mask.at(y, x) == 0) continue;
      const float d = fr.depth.at(y, x);
      if (!(d > 0.0f)) continue;
      emit(fr.extr.to_world(backproject(cam, x, y, d)), x, y);
    }
  for (const Vec3d& lp : fr.lidar) {
    double u, v;
    if (!project(cam, fr.extr.apply(lp), &u, &v)) continue;
    if (!fr.mask_at(u, v)) continue;
    emit(lp, u, v);
  }
}

/// Paired world points on tracks visible and masked at both timesteps,
/// seen through the primary camera.
void track_pairs(const Dataset& ds, int t, int canonical_t,
                 MatXR<double>* at_t, MatXR<double>* at_c) {
  const FrameRecord* ft = ds.primary_frame(t);
  const FrameRecord* fc = ds.primary_frame(canonical_t);
  std::vector<Vec3d> a, b;
  if (ft && fc) {
    const CameraModel& cam = ds.camera(ft->camera_id);
    for (const auto& [id, obs] : ds.tracks.tracks) {
      const TrackPoint *pt = nullptr, *pc = nullptr;
      for (const TrackPoint& o : obs) {
        if (!o.visible) continue;
        const int ti = ds.time_index_of_raw(o.t_raw);
        if (ti == t) pt = &o;
        if (ti == canonical_t) pc = &o;
      }
      if (!pt || !pc) continue;
      if (!ft->mask_at(pt->u, pt->v) || !fc->mask_at(pc->u, pc->v)) continue;
      const double dt = track_depth(*ft, pt->u, pt->v);
      const double dc = track_depth(*fc, pc->u, pc->v);
      if (!(dt > 0.0) || !(dc > 0.0)) continue;
      a.push_back(ft->extr.to_world(backproject(cam, pt->u, pt->v, dt)));
      b.push_back(fc->extr.to_world(backproject(cam, pc->u, pc->v, dc)));
    }
  }
  at_t->resize(static_cast<int>(a.size()), 3);
  at_c->resize(static_cast<int>(b.size()), 3);
  for (size_t i = 0; i < a.size(); ++i) {
    at_t->row(static_cast<int>(i)) = a[i].transpose();
    at_c->row(static_cast<int>(i)) = b[i].transpose();
  }
}

Box3<double> tight_box(const std::vector<Vec3d>& pts) {
  Box3<double> b;
  b.lo = Vec3d::Constant(1e30);
  b.hi = Vec3d::Constant(-1e30);
  for (const Vec3d& p : pts) {
    b.lo = b.lo.cwiseMin(p);
    b.hi = b.hi.cwiseMax(p);
  }
  return b;
}

}  // namespace

Scaffold build_scaffold(const Dataset& ds, const ScaffoldConfig& cfg) {
  Scaffold s;
  const int c_t = ds.canonical_t;
  const int t_end = std::min(c_t + cfg.window, ds.num_timesteps);

  // Canonical frame first: these points define the voxel size used for
  // warp thresholds and downsampling.
  CloudBuilder canon;
  for (int fi : ds.frames_at(c_t)) {
    const FrameRecord& fr = ds.frames[fi];
    lift_frame(fr, ds.camera(fr.camera_id), nullptr, &canon);
  }
  if (canon.pts.size() < static_cast<size_t>(cfg.min_points))
    throw SpecError("scaffold: canonical frame yields only " +
                    std::to_string(canon.pts.size()) + " masked points");
  const Box3<double> canon_box = tight_box(canon.pts);
  const double voxel =
      canon_box.extent().maxCoeff() / std::max(cfg.finest_res - 1, 1);

  CloudBuilder all = canon;
  for (int t = c_t + 1; t < t_end; ++t) {
    MatXR<double> at_t, at_c;
    track_pairs(ds, t, c_t, &at_t, &at_c);
    if (at_t.rows() < 3) {
      s.warnings.push_back("scaffold: frame " + std::to_string(t) +
                           " shares only " + std::to_string(at_t.rows()) +
                           " usable tracks with the canonical frame; "
                           "skipped");
      continue;
    }
    Rng rng(0x5caff01dULL + static_cast<uint64_t>(t));
    RigidTransform warp;
    if (!fit_rigid_ransac(at_t, at_c, cfg.ransac_voxels * voxel,
                          cfg.ransac_trials, rng, &warp)) {
      s.warnings.push_back("scaffold: frame " + std::to_string(t) +
                           " warp estimation found no consensus; skipped");
      continue;
    }
    s.warps.emplace_back(t, warp);
    for (int fi : ds.frames_at(t)) {
      const FrameRecord& fr = ds.frames[fi];
      lift_frame(fr, ds.camera(fr.camera_id), &warp, &all);
    }
  }

  // Keep the first point in each voxel cell; insertion order is
  // deterministic, so the filter is too.
  const Box3<double> union_box = tight_box(all.pts);
  std::unordered_map<int64_t, char> seen;
  seen.reserve(all.pts.size());
  std::vector<int> kept;
  for (size_t i = 0; i < all.pts.size(); ++i) {
    const Vec3d rel = (all.pts[i] - union_box.lo) / voxel;
    const int64_t kx = static_cast<int64_t>(std::floor(rel.x()));
    const int64_t ky = static_cast<int64_t>(std::floor(rel.y()));
    const int64_t kz = static_cast<int64_t>(std::floor(rel.z()));
    const int64_t key = (kx * 73856093LL) ^ (ky * 19349663LL) ^
                        (kz * 83492791LL) ^ (kx << 40) ^ (ky << 20) ^ kz;
    if (seen.emplace(key, 1).second) kept.push_back(static_cast<int>(i));
  }
  if (static_cast<int>(kept.size()) > cfg.max_points) {
    std::vector<int> thin;
    thin.reserve(cfg.max_points);
    const double step =
        static_cast<double>(kept.size()) / static_cast<double>(cfg.max_points);
    for (int i = 0; i < cfg.max_points; ++i)
      thin.push_back(kept[static_cast<size_t>(i * step)]);
    kept = std::move(thin);
  }
  if (static_cast<int>(kept.size()) < cfg.min_points)
    throw SpecError("scaffold: " + std::to_string(kept.size()) +
                    " points after filtering, need " +
                    std::to_string(cfg.min_points));

  const int m = static_cast<int>(kept.size());
  s.points.resize(m, 3);
  s.colors.resize(m, 3);
  s.source.resize(m);
  for (int i = 0; i < m; ++i) {
    s.points.row(i) = all.pts[kept[i]].transpose();
    s.colors.row(i) = all.cols[kept[i]].transpose();
    s.source[i] = all.src[kept[i]];
  }

  Box3<double> tight;
  tight.lo = s.points.colwise().minCoeff().transpose();
  tight.hi = s.points.colwise().maxCoeff().transpose();
  // A flat cloud would give the SDF grid zero volume; pad such axes.
  const double min_span = std::max(1e-3, 0.05 * tight.extent().maxCoeff());
  for (int k = 0; k < 3; ++k)
    if (tight.extent()[k] < min_span) {
      tight.lo[k] -= 0.5 * min_span;
      tight.hi[k] += 0.5 * min_span;
    }
  s.span = tight.expanded(0.1);
  return s;
}

void save_scaffold_ply(const std::string& path, const Scaffold& s) {
  FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw IoError("cannot write " + path);
  std::fprintf(f,
               "ply\nformat ascii 1.0\nelement vertex %d\n"
               "property float x\nproperty float y\nproperty float z\n"
               "property uchar red\nproperty uchar green\nproperty uchar "
               "blue\nend_header\n",
               s.size());
  for (int i = 0; i < s.size(); ++i) {
    const auto c = [&](int k) {
      const double v = std::min(std::max(s.colors(i, k), 0.0), 1.0);
      return static_cast<int>(v * 255.0 + 0.5);
    };
    std::fprintf(f, "%.6f %.6f %.6f %d %d %d\n", s.points(i, 0),
                 s.points(i, 1), s.points(i, 2), c(0), c(1), c(2));
  }
  std::fclose(f);
}

}  // namespace sdfsplat
