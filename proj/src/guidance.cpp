// Copyright Contributors to the sdfsplat Project
// SPDX-License-Identifier: Apache-2.0

#include "sdfsplat/guidance.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <nlohmann/json.hpp>

#include "sdfsplat/knn.hpp"

namespace sdfsplat {

using ordered_json = nlohmann::ordered_json;

GuidedDepth guided_depth_map(const GaussianSet<double>& gs,
                             const MotionBasis<double>& mb, int t,
                             const CameraModel& cam,
                             const RigidTransform& extr,
                             const RasterizeConfig& rc) {
  const PosedGaussians<double> posed = pose_at(gs, mb, t);
  RasterCache<double> cache;
  rasterize(posed.means, posed.quats, gs.log_scales, gs.opacities, gs.colors,
            cam, extr, rc, &cache);
  GuidedDepth gd;
  gd.width = cam.width;
  gd.height = cam.height;
  gd.depth = cache.out.depth;
  gd.alpha = cache.out.alpha;
  gd.first.assign(static_cast<size_t>(cam.width) * cam.height, -1);
  // Contributions were appended in front-to-back order, so the head of
  // each pixel list is the first splat the ray meets.
  for (size_t p = 0; p < cache.px.size(); ++p)
    if (!cache.px[p].empty()) gd.first[p] = cache.px[p].front().first;
  return gd;
}

DepthInterval sample_range(double guided_depth, double abs_sdf, double alpha,
                           double near, double far, double floor_width,
                           const GuidanceConfig& cfg) {
  DepthInterval out{near, far, false};
  if (!(alpha >= 0.5) || !(guided_depth > 0)) return out;
  const double half =
      std::max(cfg.gamma_samp * std::abs(abs_sdf), 0.5 * floor_width);
  const double lo = std::max(near, guided_depth - half);
  const double hi = std::min(far, guided_depth + half);
  if (!(hi > lo)) return out;  // guidance outside the scene slab
  out.near = lo;
  out.far = hi;
  out.guided = true;
  return out;
}

std::string event_to_json(const TrainEvent& ev) {
  ordered_json j;
  j["iter"] = ev.iter;
  j["op"] = ev.op;
  if (ev.t >= 0) j["t"] = ev.t;
  if (ev.cell[0] >= 0) j["cell"] = {ev.cell[0], ev.cell[1], ev.cell[2]};
  if (!ev.ids.empty()) j["ids"] = ev.ids;
  if (!ev.cause.empty()) j["cause"] = ev.cause;
  if (ev.op == "densify") j["sdf"] = ev.sdf;
  if (!ev.scores.empty()) j["scores"] = ev.scores;
  if (!ev.extra.empty()) j["config"] = ordered_json::parse(ev.extra);
  return j.dump();
}

namespace {

struct CellBox {
  Vec3<double> lo, hi;
  bool contains(const Vec3<double>& p) const {
    return p.x() >= lo.x() && p.x() <= hi.x() && p.y() >= lo.y() &&
           p.y() <= hi.y() && p.z() >= lo.z() && p.z() <= hi.z();
  }
};

// Back-projected depth pixels that land inside the cell, used by the
// depth-covered densification route.
struct CellSample {
  Vec3<double> point;
  Vec3<double> color;
  double dist2 = 0;
};

std::vector<CellSample> collect_cell_samples(const FrameRecord& fr,
                                             const CameraModel& cam,
                                             const GuidedDepth& gd,
                                             const CellBox& cell,
                                             const Vec3<double>& center) {
  // Bound the pixel search by the projected cell corners.
  double u0 = 1e30, u1 = -1e30, v0 = 1e30, v1 = -1e30;
  bool any = false;
  for (int corner = 0; corner < 8; ++corner) {
    const Vec3<double> p(corner & 1 ? cell.hi.x() : cell.lo.x(),
                         corner & 2 ? cell.hi.y() : cell.lo.y(),
                         corner & 4 ? cell.hi.z() : cell.lo.z());
    double u, v;
    if (!project(cam, fr.extr.apply(p), &u, &v)) continue;
    any = true;
    u0 = std::min(u0, u);
    u1 = std::max(u1, u);
    v0 = std::min(v0, v);
    v1 = std::max(v1, v);
  }
  std::vector<CellSample> out;
  if (!any) return out;
  const RigidTransform c2w = fr.extr.inverse();
  const int x0 = std::max(0, static_cast<int>(std::floor(u0)));
  const int x1 = std::min(cam.width - 1, static_cast<int>(std::ceil(u1)));
  const int y0 = std::max(0, static_cast<int>(std::floor(v0)));
  const int y1 = std::min(cam.height - 1, static_cast<int>(std::ceil(v1)));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      if (!gd.has_guidance(y, x)) continue;
      const double z = gd.depth.at(y, x);
      if (!(z > 0)) continue;
      const Vec3<double> p =
          c2w.apply(backproject(cam, double(x), double(y), z));
      if (!cell.contains(p)) continue;
      CellSample s;
      s.point = p;
      s.color = Vec3<double>(fr.image_f.at(y, x, 0), fr.image_f.at(y, x, 1),
                             fr.image_f.at(y, x, 2));
      s.dist2 = (p - center).squaredNorm();
      out.push_back(s);
    }
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const CellSample& a, const CellSample& b) {
                     return a.dist2 < b.dist2;
                   });
  return out;
}

}  // namespace

int densify(GaussianSet<double>& gs, MotionBasis<double>& mb,
            const SdfModel<double>& sdf, const Dataset& ds, int t,
            const GuidanceConfig& cfg, const RasterizeConfig& rc,
            int64_t iter, int max_new, Rng& rng,
            std::vector<TrainEvent>* events) {
  cfg.validate();
  const int n = gs.size();
  if (n == 0 || max_new <= 0) return 0;
  const PosedGaussians<double> posed = pose_at(gs, mb, t);

  const Box3<double>& box = sdf.grid.box;
  const int ng = cfg.n_grid;
  const Vec3<double> ce = box.extent() / double(ng);

  // Posed occupancy over the canonical partition.
  std::vector<int> counts(static_cast<size_t>(ng) * ng * ng, 0);
  const auto cell_of = [&](const Vec3<double>& p, int* i, int* j, int* k) {
    const Vec3<double> rel = p - box.lo;
    *i = static_cast<int>(std::floor(rel.x() / ce.x()));
    *j = static_cast<int>(std::floor(rel.y() / ce.y()));
    *k = static_cast<int>(std::floor(rel.z() / ce.z()));
    return *i >= 0 && *i < ng && *j >= 0 && *j < ng && *k >= 0 && *k < ng;
  };
  for (int g = 0; g < n; ++g) {
    int i, j, k;
    if (cell_of(posed.means.row(g).transpose(), &i, &j, &k))
      ++counts[(static_cast<size_t>(i) * ng + j) * ng + k];
  }
  int64_t occupied_sum = 0, occupied_cells = 0;
  for (int c : counts)
    if (c > 0) {
      occupied_sum += c;
      ++occupied_cells;
    }
  const double mean_occ =
      occupied_cells > 0 ? double(occupied_sum) / double(occupied_cells) : 0.0;
  const double under_thr = std::max(1.0, cfg.tau_n * mean_occ);

  // One SDF sweep over the centers of every under-occupied cell.
  std::vector<std::array<int, 3>> cand;
  for (int i = 0; i < ng; ++i)
    for (int j = 0; j < ng; ++j)
      for (int k = 0; k < ng; ++k)
        if (counts[(static_cast<size_t>(i) * ng + j) * ng + k] < under_thr)
          cand.push_back({i, j, k});
  if (cand.empty()) return 0;
  VecX<double> cand_sdf(cand.size());
  constexpr int kChunk = 8192;
  for (size_t begin = 0; begin < cand.size(); begin += kChunk) {
    const int m =
        static_cast<int>(std::min<size_t>(kChunk, cand.size() - begin));
    MatXR<double> centers(m, 3);
    for (int q = 0; q < m; ++q) {
      const auto& c = cand[begin + q];
      centers.row(q) = (box.lo + Vec3<double>(c[0] + 0.5, c[1] + 0.5,
                                              c[2] + 0.5)
                                     .cwiseProduct(ce))
                           .transpose();
    }
    cand_sdf.segment(begin, m) =
        sdf_forward(sdf, centers, t, MatXR<double>(), false, -1).sdf;
  }

  const std::vector<int> frame_idx = ds.frames_at(t);
  std::map<std::string, GuidedDepth> guided;  // camera_id -> guidance

  int added = 0;
  for (size_t ci = 0; ci < cand.size(); ++ci) {
    if (added + 3 > max_new) break;
    const double s_val = cand_sdf[ci];
    if (!(std::abs(s_val) < cfg.tau_s)) continue;
    const auto& c = cand[ci];
    CellBox cell;
    cell.lo = box.lo + Vec3<double>(c[0], c[1], c[2]).cwiseProduct(ce);
    cell.hi = cell.lo + ce;
    const Vec3<double> center = cell.lo + 0.5 * ce;

    TrainEvent ev;
    ev.iter = iter;
    ev.op = "densify";
    ev.t = t;
    ev.cell = {c[0], c[1], c[2]};
    ev.sdf = s_val;

    // Route (a): the splat depth render covers this cell. Take the three
    // back-projected points closest to the center and anchor each new
    // splat to its nearest posed neighbor so the canonical placement
    // undoes that neighbor's motion.
    bool placed = false;
    for (int fi : frame_idx) {
      const FrameRecord& fr = ds.frames[fi];
      const CameraModel& cam = ds.camera(fr.camera_id);
      auto it = guided.find(fr.camera_id);
      if (it == guided.end())
        it = guided
                 .emplace(fr.camera_id,
                          guided_depth_map(gs, mb, t, cam, fr.extr, rc))
                 .first;
      const std::vector<CellSample> samples =
          collect_cell_samples(fr, cam, it->second, cell, center);
      if (samples.size() < 3) continue;
      MatX3<double> queries(3, 3);
      for (int q = 0; q < 3; ++q)
        queries.row(q) = samples[q].point.transpose();
      const KnnResult<double> nn =
          knn_search_points(posed.means, queries, 1);
      for (int q = 0; q < 3; ++q) {
        const int a = nn.idx(q, 0);
        const Vec3<double> canonical =
            samples[q].point +
            (gs.means.row(a) - posed.means.row(a)).transpose();
        ev.ids.push_back(gs.push_back(
            canonical, gs.quats.row(a).transpose(),
            gs.log_scales.row(a).transpose(), gs.opacities[a],
            samples[q].color));
        mb.append_coeff_row(mb.coeffs.row(a).transpose());
      }
      ev.cause = "depth-backprojection";
      placed = true;
      break;
    }

    // Route (b): no depth coverage; spawn from the per-attribute normal
    // distribution of the k nearest posed splats.
    if (!placed) {
      const int k = std::min(cfg.k_nn, n);
      if (added + cfg.k_nn > max_new) break;
      MatX3<double> query(1, 3);
      query.row(0) = center.transpose();
      const KnnResult<double> nn = knn_search_points(posed.means, query, k);
      const int keff = nn.k();
      if (keff == 0) continue;
      // Per-dimension mean and population sigma over the neighbors'
      // canonical attributes, coefficients included.
      const int dims = 3 + 4 + 3 + 1 + 3 + mb.num_bases();
      VecX<double> mu = VecX<double>::Zero(dims);
      VecX<double> var = VecX<double>::Zero(dims);
      const auto attr = [&](int a) {
        VecX<double> v(dims);
        v.segment(0, 3) = gs.means.row(a).transpose();
        v.segment(3, 4) = gs.quats.row(a).transpose();
        v.segment(7, 3) = gs.log_scales.row(a).transpose();
        v[10] = gs.opacities[a];
        v.segment(11, 3) = gs.colors.row(a).transpose();
        v.segment(14, mb.num_bases()) = mb.coeffs.row(a).transpose();
        return v;
      };
      for (int q = 0; q < keff; ++q) mu += attr(nn.idx(0, q));
      mu /= double(keff);
      for (int q = 0; q < keff; ++q) {
        const VecX<double> d = attr(nn.idx(0, q)) - mu;
        var += d.cwiseProduct(d);
      }
      var /= double(keff);
      const VecX<double> sigma = var.cwiseSqrt();
      for (int s = 0; s < cfg.k_nn; ++s) {
        VecX<double> v(dims);
        for (int d = 0; d < dims; ++d)
          v[d] = mu[d] + sigma[d] * rng.normal();
        Vec4<double> quat = v.segment(3, 4);
        if (quat.norm() < 1e-6) quat = Vec4<double>(1, 0, 0, 0);
        ev.ids.push_back(gs.push_back(v.segment(0, 3), quat, v.segment(7, 3),
                                      v[10], v.segment(11, 3)));
        mb.append_coeff_row(v.segment(14, mb.num_bases()));
      }
      ev.cause = "neighbor-stats";
      placed = true;
      added += cfg.k_nn;
    } else {
      added += 3;
    }
    if (events) events->push_back(std::move(ev));
  }
  return added;
}

int prune(GaussianSet<double>& gs, MotionBasis<double>& mb,
          const SdfModel<double>& sdf, int t_now, const GuidanceConfig& cfg,
          int64_t iter, std::vector<TrainEvent>* events) {
  cfg.validate();
  constexpr int kMinSurvivors = 50;
  if (cfg.prune_window <= 0) return 0;
  const int n = gs.size();
  if (n <= kMinSurvivors) return 0;

  const int k = std::min(cfg.k_nn, n - 1);
  const KnnResult<double> nn = knn_search(gs.means, k);

  VecX<double> scores = VecX<double>::Zero(n);
  const int t_lo = std::max(0, t_now - cfg.prune_window + 1);
  for (int t = t_lo; t <= t_now; ++t) {
    const PosedGaussians<double> posed = pose_at(gs, mb, t);
    const VecX<double> s =
        sdf_extended(sdf, MatXR<double>(posed.means), t).cwiseAbs();
    for (int i = 0; i < n; ++i) {
      double acc = s[i];
      for (int j = 0; j < k; ++j) acc += s[nn.idx(i, j)];
      scores[i] += std::exp(-acc / cfg.gamma_pr);
    }
  }

  std::vector<int> doomed;
  for (int i = 0; i < n; ++i)
    if (scores[i] < cfg.tau_pr) doomed.push_back(i);
  if (doomed.empty()) return 0;

  // Refuse to cut below the survivor floor: resurrect the best-scoring
  // candidates until enough remain.
  const int survivors = n - static_cast<int>(doomed.size());
  if (survivors < kMinSurvivors) {
    std::stable_sort(doomed.begin(), doomed.end(), [&](int a, int b) {
      return scores[a] != scores[b] ? scores[a] > scores[b] : a < b;
    });
    doomed.erase(doomed.begin(), doomed.begin() + (kMinSurvivors - survivors));
    std::sort(doomed.begin(), doomed.end());
  }
  if (doomed.empty()) return 0;

  if (events) {
    TrainEvent ev;
    ev.iter = iter;
    ev.op = "prune";
    ev.t = t_now;
    ev.cause = "window-score";
    for (int i : doomed) {
      ev.ids.push_back(gs.ids[i]);
      ev.scores.push_back(scores[i]);
    }
    events->push_back(std::move(ev));
  }

  std::vector<char> keep(n, 1);
  for (int i : doomed) keep[i] = 0;
  gs.filter(keep);
  mb.filter_coeff_rows(keep);
  return static_cast<int>(doomed.size());
}

}  // namespace sdfsplat
