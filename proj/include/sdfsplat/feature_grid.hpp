// Copyright Contributors to the sdfsplat Project
// SPDX-License-Identifier: Apache-2.0
//
// Dense multiresolution feature grids over the canonical object box.
// Trilinear interpolation carries directional tangents (for SDF spatial
// gradients), and the backward pass includes the mixed second derivatives
// of the interpolation weights that the tangent path introduces.

#pragma once

#include <vector>

#include "sdfsplat/adam.hpp"
#include "sdfsplat/common.hpp"
#include "sdfsplat/rng.hpp"

namespace sdfsplat {

template <class S> struct FeatureGrid {
  Box3<S> box;            // canonical span the grid covers
  std::vector<int> res;   // vertices per axis, strictly increasing
  int feat = 2;           // features per level
  std::vector<MatXR<S>> data;  // per level: res^3 x feat

  int levels() const { return static_cast<int>(res.size()); }
  int total_feat() const { return levels() * feat; }

  /// Edge length of one cell of the finest level, taken along the box's
  /// largest axis; resolution-linked tolerances are measured in these.
  S finest_voxel() const {
    return box.extent().maxCoeff() / S(res.back() - 1);
  }

  template <class T> FeatureGrid<T> cast() const {
    FeatureGrid<T> g;
    g.box = box.template cast<T>();
    g.res = res;
    g.feat = feat;
    for (const auto& d : data) g.data.push_back(d.template cast<T>());
    return g;
  }
};

template <class S>
FeatureGrid<S> make_feature_grid(const Box3<S>& box,
                                 const std::vector<int>& res, int feat,
                                 Rng& rng, double init_scale = 1e-4) {
  for (size_t i = 0; i + 1 < res.size(); ++i)
    if (res[i] >= res[i + 1])
      throw SpecError("feature grid resolutions must increase strictly");
  for (int r : res)
    if (r < 2) throw SpecError("feature grid needs at least 2 vertices/axis");
  FeatureGrid<S> g;
  g.box = box;
  g.res = res;
  g.feat = feat;
  for (int r : res) {
    MatXR<S> d(static_cast<int64_t>(r) * r * r, feat);
    for (int64_t i = 0; i < d.size(); ++i)
      d.data()[i] = S(init_scale * rng.normal());
    g.data.push_back(std::move(d));
  }
  return g;
}

namespace detail {

/// Per-point, per-level interpolation geometry shared by forward and
/// backward.
template <class S> struct CellGeom {
  int64_t base[8];  // corner row indices
  S wx[2], wy[2], wz[2];
  S sx, sy, sz;  // d(local coordinate)/d(world), zero when clamped
};

template <class S>
CellGeom<S> cell_geom(const FeatureGrid<S>& g, int level, const Vec3<S>& p) {
  CellGeom<S> c;
  const int r = g.res[level];
  const Vec3<S> ext = g.box.extent();
  S f[3];
  int i0[3];
  S scale[3];
  for (int a = 0; a < 3; ++a) {
    const S raw = (p[a] - g.box.lo[a]) / ext[a] * S(r - 1);
    const S u = std::min(std::max(raw, S(0)), S(r - 1));
    scale[a] = (raw > S(0) && raw < S(r - 1)) ? S(r - 1) / ext[a] : S(0);
    int i = static_cast<int>(std::floor(u));
    i = std::min(std::max(i, 0), r - 2);
    i0[a] = i;
    f[a] = u - S(i);
  }
  c.wx[0] = S(1) - f[0];
  c.wx[1] = f[0];
  c.wy[0] = S(1) - f[1];
  c.wy[1] = f[1];
  c.wz[0] = S(1) - f[2];
  c.wz[1] = f[2];
  c.sx = scale[0];
  c.sy = scale[1];
  c.sz = scale[2];
  int k = 0;
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b)
      for (int d = 0; d < 2; ++d)
        c.base[k++] = (static_cast<int64_t>(i0[0] + a) * r + (i0[1] + b)) * r +
                      (i0[2] + d);
  return c;
}

}  // namespace detail

/// Interpolates features of the first `active` levels at each point;
/// inactive level columns are zero. Optional tangents produce directional
/// derivatives of the features in `dv`.
template <class S>
void grid_forward(const FeatureGrid<S>& g, const MatXR<S>& pts,
                  const std::vector<MatXR<S>>& tangents, int active,
                  MatXR<S>& v, std::vector<MatXR<S>>& dv) {
  const int n = static_cast<int>(pts.rows());
  const size_t kt = tangents.size();
  v = MatXR<S>::Zero(n, g.total_feat());
  dv.assign(kt, MatXR<S>::Zero(n, g.total_feat()));
  for (int level = 0; level < active; ++level) {
    const MatXR<S>& d = g.data[level];
    const int col0 = level * g.feat;
    for (int i = 0; i < n; ++i) {
      const auto c =
          detail::cell_geom(g, level, Vec3<S>(pts.row(i).transpose()));
      for (int f = 0; f < g.feat; ++f) {
        S val = S(0), gx = S(0), gy = S(0), gz = S(0);
        int corner = 0;
        for (int a = 0; a < 2; ++a) {
          const S dwa = a == 0 ? S(-1) : S(1);
          for (int b = 0; b < 2; ++b) {
            const S dwb = b == 0 ? S(-1) : S(1);
            for (int e = 0; e < 2; ++e) {
              const S dwe = e == 0 ? S(-1) : S(1);
              const S fv = d(c.base[corner], f);
              val += c.wx[a] * c.wy[b] * c.wz[e] * fv;
              gx += dwa * c.wy[b] * c.wz[e] * fv;
              gy += c.wx[a] * dwb * c.wz[e] * fv;
              gz += c.wx[a] * c.wy[b] * dwe * fv;
              ++corner;
            }
          }
        }
        v(i, col0 + f) = val;
        for (size_t k = 0; k < kt; ++k)
          dv[k](i, col0 + f) = gx * c.sx * tangents[k](i, 0) +
                               gy * c.sy * tangents[k](i, 1) +
                               gz * c.sz * tangents[k](i, 2);
      }
    }
  }
}

/// Backward of grid_forward. Accumulates into per-level feature gradients,
/// point gradients, and tangent gradients; inactive levels receive
/// nothing.
template <class S>
void grid_backward(const FeatureGrid<S>& g, const MatXR<S>& pts,
                   const std::vector<MatXR<S>>& tangents, int active,
                   const MatXR<S>& v_bar, const std::vector<MatXR<S>>& dv_bar,
                   std::vector<MatXR<S>>& data_grad, MatXR<S>& pts_bar,
                   std::vector<MatXR<S>>& tan_bar) {
  const int n = static_cast<int>(pts.rows());
  const size_t kt = tangents.size();
  for (int level = 0; level < active; ++level) {
    const MatXR<S>& d = g.data[level];
    MatXR<S>& dg = data_grad[level];
    const int col0 = level * g.feat;
    for (int i = 0; i < n; ++i) {
      const auto c =
          detail::cell_geom(g, level, Vec3<S>(pts.row(i).transpose()));
      for (int f = 0; f < g.feat; ++f) {
        const S vb = v_bar(i, col0 + f);
        // First derivatives and mixed second derivatives of the
        // interpolated value with respect to the local coordinates.
        S gx = S(0), gy = S(0), gz = S(0);
        S hxy = S(0), hxz = S(0), hyz = S(0);
        int corner = 0;
        for (int a = 0; a < 2; ++a) {
          const S dwa = a == 0 ? S(-1) : S(1);
          for (int b = 0; b < 2; ++b) {
            const S dwb = b == 0 ? S(-1) : S(1);
            for (int e = 0; e < 2; ++e) {
              const S dwe = e == 0 ? S(-1) : S(1);
              const S fv = d(c.base[corner], f);
              gx += dwa * c.wy[b] * c.wz[e] * fv;
              gy += c.wx[a] * dwb * c.wz[e] * fv;
              gz += c.wx[a] * c.wy[b] * dwe * fv;
              hxy += dwa * dwb * c.wz[e] * fv;
              hxz += dwa * c.wy[b] * dwe * fv;
              hyz += c.wx[a] * dwb * dwe * fv;
              ++corner;
            }
          }
        }
        S px = vb * gx * c.sx, py = vb * gy * c.sy, pz = vb * gz * c.sz;
        for (size_t k = 0; k < kt; ++k) {
          const S db = dv_bar.empty() ? S(0) : dv_bar[k](i, col0 + f);
          if (db == S(0)) continue;
          const S tx = c.sx * tangents[k](i, 0);
          const S ty = c.sy * tangents[k](i, 1);
          const S tz = c.sz * tangents[k](i, 2);
          // d(dv)/d(p): mixed weight curvature (pure seconds vanish).
          px += db * c.sx * (hxy * ty + hxz * tz);
          py += db * c.sy * (hxy * tx + hyz * tz);
          pz += db * c.sz * (hxz * tx + hyz * ty);
          tan_bar[k](i, 0) += db * gx * c.sx;
          tan_bar[k](i, 1) += db * gy * c.sy;
          tan_bar[k](i, 2) += db * gz * c.sz;
        }
        pts_bar(i, 0) += px;
        pts_bar(i, 1) += py;
        pts_bar(i, 2) += pz;

        // Feature gradients: plain weight for the value path, weight
        // gradient dotted with the tangent for each tangent path.
        corner = 0;
        for (int a = 0; a < 2; ++a) {
          const S dwa = a == 0 ? S(-1) : S(1);
          for (int b = 0; b < 2; ++b) {
            const S dwb = b == 0 ? S(-1) : S(1);
            for (int e = 0; e < 2; ++e) {
              const S dwe = e == 0 ? S(-1) : S(1);
              S acc = vb * c.wx[a] * c.wy[b] * c.wz[e];
              for (size_t k = 0; k < kt; ++k) {
                const S db =
                    dv_bar.empty() ? S(0) : dv_bar[k](i, col0 + f);
                if (db == S(0)) continue;
                acc += db * (dwa * c.wy[b] * c.wz[e] * c.sx *
                                 tangents[k](i, 0) +
                             c.wx[a] * dwb * c.wz[e] * c.sy *
                                 tangents[k](i, 1) +
                             c.wx[a] * c.wy[b] * dwe * c.sz *
                                 tangents[k](i, 2));
              }
              dg(c.base[corner], f) += acc;
              ++corner;
            }
          }
        }
      }
    }
  }
}

template <class S>
void collect_grid_params(FeatureGrid<S>& g, const std::string& prefix,
                         std::vector<ParamRef<S>>& out) {
  for (int level = 0; level < g.levels(); ++level)
    out.push_back({g.data[level].data(),
                   static_cast<int64_t>(g.data[level].size()),
                   prefix + ".level" + std::to_string(level)});
}

}  // namespace sdfsplat
