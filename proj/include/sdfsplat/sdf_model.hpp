// Copyright Contributors to the sdfsplat Project
// SPDX-License-Identifier: Apache-2.0
//
// Deformation-aware SDF: a residual deformation network maps observed
// points into a canonical frame sampled by multiresolution feature grids,
// a topology network supplies extra coordinates, and small heads decode
// signed distance and view/appearance-conditioned color. Per-frame latent
// codes condition deformation and appearance; both start at zero, so the
// whole model is time-invariant until trained.

#pragma once

#include <string>
#include <vector>

#include "sdfsplat/adam.hpp"
#include "sdfsplat/feature_grid.hpp"
#include "sdfsplat/mlp.hpp"
#include "sdfsplat/rng.hpp"

namespace sdfsplat {

struct SdfArch {
  std::vector<int> grid_res = {16, 32, 64, 128};
  int grid_feat = 2;
  int def_depth = 4, def_width = 128;
  int hyp_depth = 4, hyp_width = 128;
  int sdf_depth = 2, sdf_width = 64;
  int rgb_depth = 2, rgb_width = 64;
  int hyper_dim = 2;   // extra coordinates from the topology network
  int latent_dim = 8;  // per-frame deformation and appearance codes
  int pe_x_freqs = 6;
  int pe_dir_freqs = 4;
  double sharpness_init = 20.0;
  int pretrain_iters = 300;  // sphere-shaped geometry at construction
  int pretrain_batch = 512;
  double pretrain_lr = 1e-3;

  int pe_x_dim() const { return 3 + 6 * pe_x_freqs; }
  int pe_dir_dim() const { return 3 + 6 * pe_dir_freqs; }
};

template <class S> struct SdfModel {
  SdfArch arch;
  int num_frames = 0;
  Box3<S> world_box;  // span used to normalize observed points
  FeatureGrid<S> grid;
  Mlp<S> mlp_def, mlp_hyp, mlp_sdf, mlp_rgb;
  MatXR<S> z, a;  // num_frames x latent_dim each
  S rho = S(0);   // raw sharpness parameter

  S sharpness() const { return S(1e-3) + softplus(rho); }

  template <class T> SdfModel<T> cast() const {
    SdfModel<T> m;
    m.arch = arch;
    m.num_frames = num_frames;
    m.world_box = world_box.template cast<T>();
    m.grid = grid.template cast<T>();
    m.mlp_def = mlp_def.template cast<T>();
    m.mlp_hyp = mlp_hyp.template cast<T>();
    m.mlp_sdf = mlp_sdf.template cast<T>();
    m.mlp_rgb = mlp_rgb.template cast<T>();
    m.z = z.template cast<T>();
    m.a = a.template cast<T>();
    m.rho = T(rho);
    return m;
  }
};

/// Gradient twin of SdfModel; same buffer shapes, zero-filled.
template <class S> struct SdfGrads {
  std::vector<MatXR<S>> grid;
  Mlp<S> def, hyp, sdf, rgb;
  MatXR<S> z, a;
  S rho = S(0);

  static SdfGrads zeros_like(const SdfModel<S>& m) {
    SdfGrads g;
    for (const auto& d : m.grid.data)
      g.grid.push_back(MatXR<S>::Zero(d.rows(), d.cols()));
    g.def = zero_like(m.mlp_def);
    g.hyp = zero_like(m.mlp_hyp);
    g.sdf = zero_like(m.mlp_sdf);
    g.rgb = zero_like(m.mlp_rgb);
    g.z = MatXR<S>::Zero(m.z.rows(), m.z.cols());
    g.a = MatXR<S>::Zero(m.a.rows(), m.a.cols());
    return g;
  }
};

/// Parameter views in a fixed order shared by the optimizer, checkpoint
/// writer, and gradient checks.
template <class S>
std::vector<ParamRef<S>> collect_params(SdfModel<S>& m) {
  std::vector<ParamRef<S>> out;
  collect_grid_params(m.grid, "grid", out);
  collect_mlp_params(m.mlp_def, "def", out);
  collect_mlp_params(m.mlp_hyp, "hyp", out);
  collect_mlp_params(m.mlp_sdf, "sdf", out);
  collect_mlp_params(m.mlp_rgb, "rgb", out);
  out.push_back({m.z.data(), static_cast<int64_t>(m.z.size()), "z"});
  out.push_back({m.a.data(), static_cast<int64_t>(m.a.size()), "a"});
  out.push_back({&m.rho, 1, "rho"});
  return out;
}

template <class S>
std::vector<ParamRef<S>> collect_grads(SdfGrads<S>& g) {
  std::vector<ParamRef<S>> out;
  for (size_t i = 0; i < g.grid.size(); ++i)
    out.push_back({g.grid[i].data(), static_cast<int64_t>(g.grid[i].size()),
                   "grid.level" + std::to_string(i)});
  collect_mlp_params(g.def, "def", out);
  collect_mlp_params(g.hyp, "hyp", out);
  collect_mlp_params(g.sdf, "sdf", out);
  collect_mlp_params(g.rgb, "rgb", out);
  out.push_back({g.z.data(), static_cast<int64_t>(g.z.size()), "z"});
  out.push_back({g.a.data(), static_cast<int64_t>(g.a.size()), "a"});
  out.push_back({&g.rho, 1, "rho"});
  return out;
}

/// Grid levels available `iters` optimizer steps into SDF training: the
/// coarsest level only for the first 500, one more every 200 after that.
inline int progressive_unlock(int64_t iters, int total_levels) {
  if (iters < 500) return 1;
  const int lvl = 2 + static_cast<int>((iters - 500) / 200);
  return std::min(lvl, total_levels);
}

/// Opacity of the ray segment between two consecutive SDF samples.
template <class S> S neus_alpha(S sdf_i, S sdf_next, S sharpness) {
  const S phi_i = sigmoid(sharpness * sdf_i);
  const S phi_n = sigmoid(sharpness * sdf_next);
  const S alpha = (phi_i - phi_n) / std::max(phi_i, S(1e-12));
  return std::max(alpha, S(0));
}

namespace detail {

// Positional encoding [x, sin(2^j pi x), cos(2^j pi x) ...] with optional
// tangent propagation.
template <class S>
void pe_with_tangents(const MatXR<S>& x, int freqs,
                      const std::vector<MatXR<S>>& dx, MatXR<S>& y,
                      std::vector<MatXR<S>>& dy) {
  const int n = static_cast<int>(x.rows());
  const int d = static_cast<int>(x.cols());
  const size_t kt = dx.size();
  y.resize(n, d + 2 * freqs * d);
  dy.assign(kt, MatXR<S>::Zero(n, y.cols()));
  y.leftCols(d) = x;
  for (size_t k = 0; k < kt; ++k) dy[k].leftCols(d) = dx[k];
  for (int j = 0; j < freqs; ++j) {
    const S f = S(std::pow(2.0, j) * M_PI);
    for (int c = 0; c < d; ++c) {
      const int cs = d + (2 * j) * d + c;
      const int cc = d + (2 * j + 1) * d + c;
      for (int i = 0; i < n; ++i) {
        const S arg = f * x(i, c);
        y(i, cs) = std::sin(arg);
        y(i, cc) = std::cos(arg);
        for (size_t k = 0; k < kt; ++k) {
          dy[k](i, cs) = f * std::cos(arg) * dx[k](i, c);
          dy[k](i, cc) = -f * std::sin(arg) * dx[k](i, c);
        }
      }
    }
  }
}

}  // namespace detail

template <class S> struct SdfOutputs {
  VecX<S> sdf;
  MatX3<S> grad;   // d(sdf)/d(observed point), rows valid when requested
  MatX3<S> color;  // rows valid when directions were given
};

template <class S> struct SdfCache {
  int t = 0;
  int active = 0;
  bool want_grad = false, want_color = false;
  MatXR<S> net_in;                  // [pe(x_n) | z_t] rows
  std::vector<MatXR<S>> net_din;    // its spatial tangents
  MlpCache<S> def_cache, hyp_cache, sdf_cache, rgb_cache;
  MatXR<S> xc;                      // canonical points
  std::vector<MatXR<S>> dxc;        // canonical tangents
  MatXR<S> v;                       // grid features
  std::vector<MatXR<S>> dv;
  MatXR<S> color;                   // post-sigmoid
};

/// Evaluates signed distance (and optionally its spatial gradient and a
/// view-dependent color) for observed-space points at timestep t.
/// `active_levels` < 1 means the full grid.
template <class S>
SdfOutputs<S> sdf_forward(const SdfModel<S>& m, const MatXR<S>& x, int t,
                          const MatXR<S>& dirs, bool want_grad,
                          int active_levels, SdfCache<S>* cache = nullptr) {
  if (t < 0 || t >= m.num_frames)
    throw SpecError("sdf_forward: t=" + std::to_string(t) + " outside [0, " +
                    std::to_string(m.num_frames) + ")");
  const int n = static_cast<int>(x.rows());
  const bool want_color = dirs.rows() == x.rows() && dirs.cols() == 3;
  const int active =
      active_levels < 1 ? m.grid.levels()
                        : std::min(active_levels, m.grid.levels());

  SdfCache<S> local;
  SdfCache<S>& c = cache ? *cache : local;
  c.t = t;
  c.active = active;
  c.want_grad = want_grad;
  c.want_color = want_color;

  // Normalized input and its tangents (the identity basis, scaled).
  const Vec3<S> center = m.world_box.center();
  const Vec3<S> half = m.world_box.extent() * S(0.5);
  MatXR<S> xn(n, 3);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < 3; ++k) xn(i, k) = (x(i, k) - center[k]) / half[k];
  std::vector<MatXR<S>> dxn;
  if (want_grad) {
    dxn.assign(3, MatXR<S>::Zero(n, 3));
    for (int k = 0; k < 3; ++k) dxn[k].col(k).setConstant(S(1) / half[k]);
  }
  MatXR<S> pe;
  std::vector<MatXR<S>> dpe;
  detail::pe_with_tangents(xn, m.arch.pe_x_freqs, dxn, pe, dpe);

  c.net_in.resize(n, pe.cols() + m.arch.latent_dim);
  c.net_in.leftCols(pe.cols()) = pe;
  c.net_in.rightCols(m.arch.latent_dim) = m.z.row(t).replicate(n, 1);
  c.net_din.assign(dpe.size(), MatXR<S>::Zero(n, c.net_in.cols()));
  for (size_t k = 0; k < dpe.size(); ++k)
    c.net_din[k].leftCols(pe.cols()) = dpe[k];

  mlp_forward(m.mlp_def, c.net_in, c.net_din, c.def_cache);
  mlp_forward(m.mlp_hyp, c.net_in, c.net_din, c.hyp_cache);
  const MatXR<S>& delta = c.def_cache.xs.back();
  const MatXR<S>& w = c.hyp_cache.xs.back();

  c.xc = x + delta;
  c.dxc.clear();
  if (want_grad) {
    c.dxc.assign(3, MatXR<S>());
    for (int k = 0; k < 3; ++k) {
      c.dxc[k] = c.def_cache.dxs.back()[k];
      c.dxc[k].col(k).array() += S(1);
    }
  }

  grid_forward(m.grid, c.xc, c.dxc, active, c.v, c.dv);

  MatXR<S> sdf_in(n, c.v.cols() + w.cols());
  sdf_in.leftCols(c.v.cols()) = c.v;
  sdf_in.rightCols(w.cols()) = w;
  std::vector<MatXR<S>> sdf_din;
  if (want_grad) {
    sdf_din.assign(3, MatXR<S>::Zero(n, sdf_in.cols()));
    for (int k = 0; k < 3; ++k) {
      sdf_din[k].leftCols(c.v.cols()) = c.dv[k];
      sdf_din[k].rightCols(w.cols()) = c.hyp_cache.dxs.back()[k];
    }
  }
  mlp_forward(m.mlp_sdf, sdf_in, sdf_din, c.sdf_cache);

  SdfOutputs<S> out;
  out.sdf = c.sdf_cache.xs.back().col(0);
  if (want_grad) {
    out.grad.resize(n, 3);
    for (int k = 0; k < 3; ++k)
      out.grad.col(k) = c.sdf_cache.dxs.back()[k].col(0);
  }
  if (want_color) {
    MatXR<S> pe_dir;
    std::vector<MatXR<S>> no_tan;
    detail::pe_with_tangents(dirs, m.arch.pe_dir_freqs, {}, pe_dir, no_tan);
    MatXR<S> rgb_in(n, c.v.cols() + w.cols() + pe_dir.cols() +
                           m.arch.latent_dim);
    rgb_in.leftCols(c.v.cols()) = c.v;
    rgb_in.middleCols(c.v.cols(), w.cols()) = w;
    rgb_in.middleCols(c.v.cols() + w.cols(), pe_dir.cols()) = pe_dir;
    rgb_in.rightCols(m.arch.latent_dim) = m.a.row(t).replicate(n, 1);
    mlp_forward(m.mlp_rgb, rgb_in, {}, c.rgb_cache);
    c.color = c.rgb_cache.xs.back().unaryExpr(
        [](S v) { return sigmoid(v); });
    out.color = c.color;
  }
  return out;
}

/// Deformed canonical positions only (the map observed -> canonical).
template <class S>
MatXR<S> deform_to_canonical(const SdfModel<S>& m, const MatXR<S>& x, int t) {
  SdfCache<S> cache;
  sdf_forward(m, x, t, MatXR<S>(), false, 1, &cache);
  return cache.xc;
}

/// Backward through sdf_forward. Pass zero-size bars for outputs that were
/// not requested. Gradients accumulate into `g`.
template <class S>
void sdf_backward(const SdfModel<S>& m, const SdfCache<S>& c,
                  const VecX<S>& sdf_bar, const MatX3<S>& grad_bar,
                  const MatX3<S>& color_bar, SdfGrads<S>& g) {
  const int n = static_cast<int>(c.net_in.rows());
  const int vcols = static_cast<int>(c.v.cols());
  const int wcols = m.arch.hyper_dim;
  MatXR<S> v_bar = MatXR<S>::Zero(n, vcols);
  MatXR<S> w_bar = MatXR<S>::Zero(n, wcols);
  std::vector<MatXR<S>> dv_bar, dw_bar;

  // Color head first; it also feeds v and w.
  if (c.want_color && color_bar.size() > 0) {
    MatXR<S> y_bar =
        (color_bar.array() * c.color.array() * (S(1) - c.color.array()))
            .matrix();
    MatXR<S> in_bar;
    std::vector<MatXR<S>> din_bar;
    mlp_backward(m.mlp_rgb, c.rgb_cache, y_bar, {}, g.rgb, in_bar, din_bar);
    v_bar += in_bar.leftCols(vcols);
    w_bar += in_bar.middleCols(vcols, wcols);
    g.a.row(c.t) +=
        in_bar.rightCols(m.arch.latent_dim).colwise().sum();
  }

  // Signed-distance head: value plus (optionally) the three tangents that
  // realize the spatial gradient.
  {
    MatXR<S> y_bar = MatXR<S>::Zero(n, 1);
    if (sdf_bar.size() > 0) y_bar.col(0) = sdf_bar;
    std::vector<MatXR<S>> dy_bar;
    if (c.want_grad) {
      dy_bar.assign(3, MatXR<S>::Zero(n, 1));
      if (grad_bar.size() > 0)
        for (int k = 0; k < 3; ++k) dy_bar[k].col(0) = grad_bar.col(k);
    }
    MatXR<S> in_bar;
    std::vector<MatXR<S>> din_bar;
    mlp_backward(m.mlp_sdf, c.sdf_cache, y_bar, dy_bar, g.sdf, in_bar,
                 din_bar);
    v_bar += in_bar.leftCols(vcols);
    w_bar += in_bar.rightCols(wcols);
    if (c.want_grad) {
      dv_bar.assign(3, MatXR<S>());
      dw_bar.assign(3, MatXR<S>());
      for (int k = 0; k < 3; ++k) {
        dv_bar[k] = din_bar[k].leftCols(vcols);
        dw_bar[k] = din_bar[k].rightCols(wcols);
      }
    }
  }

  // Grid: features, canonical points, canonical tangents.
  MatXR<S> xc_bar = MatXR<S>::Zero(n, 3);
  std::vector<MatXR<S>> dxc_bar;
  if (c.want_grad) dxc_bar.assign(3, MatXR<S>::Zero(n, 3));
  grid_backward(m.grid, c.xc, c.dxc, c.active, v_bar, dv_bar, g.grid, xc_bar,
                dxc_bar);

  // Topology network: its output bars are w_bar / dw_bar.
  {
    MatXR<S> in_bar;
    std::vector<MatXR<S>> din_bar;
    mlp_backward(m.mlp_hyp, c.hyp_cache, w_bar, dw_bar, g.hyp, in_bar,
                 din_bar);
    g.z.row(c.t) += in_bar.rightCols(m.arch.latent_dim).colwise().sum();
  }

  // Deformation network: xc = x + delta passes bars straight through.
  {
    MatXR<S> in_bar;
    std::vector<MatXR<S>> din_bar;
    mlp_backward(m.mlp_def, c.def_cache, xc_bar, dxc_bar, g.def, in_bar,
                 din_bar);
    g.z.row(c.t) += in_bar.rightCols(m.arch.latent_dim).colwise().sum();
  }
}

/// Signed distance with a monotone extension outside the grid box: the
/// boundary value plus the straight-line distance to the box. Used by
/// pruning and occupancy queries that may leave the canonical span.
template <class S>
VecX<S> sdf_extended(const SdfModel<S>& m, const MatXR<S>& x, int t,
                     int active_levels = -1) {
  const int n = static_cast<int>(x.rows());
  MatXR<S> clamped(n, 3);
  VecX<S> extra(n);
  for (int i = 0; i < n; ++i) {
    const Vec3<S> p = x.row(i).transpose();
    const Vec3<S> q = m.grid.box.clamp(p);
    clamped.row(i) = q.transpose();
    extra[i] = (p - q).norm();
  }
  SdfOutputs<S> out =
      sdf_forward(m, clamped, t, MatXR<S>(), false, active_levels);
  return out.sdf + extra;
}

template <class S>
SdfModel<S> make_sdf_model(const SdfArch& arch, const Box3<S>& canonical_box,
                           const Box3<S>& world_box, int num_frames,
                           Rng& rng);

/// Short regression fitting the coarsest level and the distance head to a
/// centered sphere of half the box's smallest extent. Runs once at
/// construction; a shaped starting surface keeps early training stable.
template <class S> void pretrain_sphere(SdfModel<S>& m, Rng& rng) {
  if (m.arch.pretrain_iters <= 0) return;
  const Vec3<S> center = m.grid.box.center();
  const S radius = S(0.5) * m.grid.box.min_extent();
  std::vector<ParamRef<S>> params;
  collect_grid_params(m.grid, "grid", params);
  params.resize(1);  // coarsest level only
  collect_mlp_params(m.mlp_sdf, "sdf", params);
  Adam<S> opt;
  opt.init(params);

  const int b = m.arch.pretrain_batch;
  for (int iter = 0; iter < m.arch.pretrain_iters; ++iter) {
    MatXR<S> pts(b, 3);
    VecX<S> target(b);
    for (int i = 0; i < b; ++i) {
      for (int k = 0; k < 3; ++k)
        pts(i, k) = m.grid.box.lo[k] +
                    S(rng.uniform()) * (m.grid.box.hi[k] - m.grid.box.lo[k]);
      target[i] = (Vec3<S>(pts.row(i).transpose()) - center).norm() - radius;
    }
    SdfCache<S> cache;
    SdfOutputs<S> out = sdf_forward(m, pts, 0, MatXR<S>(), false, 1, &cache);
    SdfGrads<S> g = SdfGrads<S>::zeros_like(m);
    const VecX<S> sdf_bar = S(2) * (out.sdf - target) / S(b);
    sdf_backward(m, cache, sdf_bar, MatX3<S>(), MatX3<S>(), g);
    std::vector<ParamRef<S>> grads;
    for (size_t i = 0; i < g.grid.size(); ++i)
      grads.push_back({g.grid[i].data(),
                       static_cast<int64_t>(g.grid[i].size()), ""});
    grads.resize(1);
    collect_mlp_params(g.sdf, "sdf", grads);
    opt.step(params, grads, m.arch.pretrain_lr);
  }
}

template <class S>
SdfModel<S> make_sdf_model(const SdfArch& arch, const Box3<S>& canonical_box,
                           const Box3<S>& world_box, int num_frames,
                           Rng& rng) {
  if (num_frames < 1) throw SpecError("sdf model needs at least one frame");
  SdfModel<S> m;
  m.arch = arch;
  m.num_frames = num_frames;
  m.world_box = world_box;
  m.grid = make_feature_grid(canonical_box, arch.grid_res, arch.grid_feat,
                             rng);
  const int net_in = arch.pe_x_dim() + arch.latent_dim;
  m.mlp_def = make_mlp<S>(net_in, arch.def_width, arch.def_depth, 3, rng,
                          /*zero_last=*/true);
  m.mlp_hyp = make_mlp<S>(net_in, arch.hyp_width, arch.hyp_depth,
                          arch.hyper_dim, rng);
  m.mlp_sdf = make_mlp<S>(m.grid.total_feat() + arch.hyper_dim,
                          arch.sdf_width, arch.sdf_depth, 1, rng);
  m.mlp_rgb = make_mlp<S>(m.grid.total_feat() + arch.hyper_dim +
                              arch.pe_dir_dim() + arch.latent_dim,
                          arch.rgb_width, arch.rgb_depth, 3, rng);
  m.z = MatXR<S>::Zero(num_frames, arch.latent_dim);
  m.a = MatXR<S>::Zero(num_frames, arch.latent_dim);
  m.rho = inv_softplus(S(arch.sharpness_init) - S(1e-3));
  pretrain_sphere(m, rng);
  return m;
}

}  // namespace sdfsplat
