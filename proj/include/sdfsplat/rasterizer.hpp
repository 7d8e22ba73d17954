// Copyright Contributors to the sdfsplat Project
// SPDX-License-Identifier: Apache-2.0
//
// CPU splat rasterizer with hand-derived gradients. Splats are projected
// with the standard perspective Jacobian, depth-sorted once per frame, and
// composited front to back; the backward pass replays each pixel's
// contribution list with suffix sums over transmittance.

#pragma once

#include <algorithm>
#include <utility>
#include <vector>

#include "sdfsplat/camera.hpp"
#include "sdfsplat/gaussian_set.hpp"
#include "sdfsplat/image.hpp"

namespace sdfsplat {

struct RasterizeConfig {
  double near = 0.01;          // camera-z cull plane
  double eps2d = 0.3;          // 2D covariance inflation (px^2), anti-alias
  double alpha_min = 1.0 / 255.0;  // per-pixel contribution cull
  double alpha_max = 0.9999;   // compositing clamp
  double t_stop = 1e-4;        // transmittance early-out
  double eps_div = 1e-8;       // expected-depth normalization guard
  double radius_sigmas = 3.0;  // splat bounding radius in sigmas
  double power_cut = -16.0;    // skip contributions with log-weight below this
};

template <class S> struct RenderOutput {
  Image<S> image;  // H x W x 3
  Image<S> depth;  // H x W, expected depth normalized by alpha
  Image<S> alpha;  // H x W
};

template <class S> struct SplatProj {
  bool visible = false;
  Vec3<S> p_cam = Vec3<S>::Zero();
  Mat3<S> cov_cam = Mat3<S>::Zero();
  Mat2<S> cov2d = Mat2<S>::Zero();
  Mat2<S> conic = Mat2<S>::Zero();
  Vec2<S> mean2d = Vec2<S>::Zero();
  int x0 = 0, x1 = 0, y0 = 0, y1 = 0;  // inclusive pixel bounds
};

template <class S> struct RasterCache {
  int width = 0, height = 0;
  std::vector<SplatProj<S>> proj;
  std::vector<int> order;  // visible indices sorted by depth
  std::vector<std::vector<std::pair<int, S>>> px;  // (splat, alpha) per pixel
  RenderOutput<S> out;
};

template <class S> struct RasterGrads {
  MatX3<S> means;   // w.r.t. posed means
  MatX4<S> quats;   // w.r.t. posed unit quaternions
  MatX3<S> log_scales;
  VecX<S> opacities;
  MatX3<S> colors;

  static RasterGrads zeros(int n) {
    RasterGrads g;
    g.means = MatX3<S>::Zero(n, 3);
    g.quats = MatX4<S>::Zero(n, 4);
    g.log_scales = MatX3<S>::Zero(n, 3);
    g.opacities = VecX<S>::Zero(n);
    g.colors = MatX3<S>::Zero(n, 3);
    return g;
  }
};

namespace detail {

template <class S>
SplatProj<S> project_splat(const Vec3<S>& mean, const Vec4<S>& quat,
                           const Vec3<S>& log_scale, const CameraModel& cam,
                           const Mat3<S>& r_cw, const Vec3<S>& t_cw,
                           const RasterizeConfig& cfg) {
  SplatProj<S> sp;
  sp.p_cam = r_cw * mean + t_cw;
  const S z = sp.p_cam.z();
  if (!(z > S(cfg.near))) return sp;

  const Mat3<S> rot = quat_to_rot(quat);
  const Vec3<S> scale = log_scale.array().exp();
  const Mat3<S> m = rot * scale.asDiagonal();
  const Mat3<S> cov_world = m * m.transpose();
  sp.cov_cam = r_cw * cov_world * r_cw.transpose();

  const S fx = S(cam.fx), fy = S(cam.fy);
  const S x = sp.p_cam.x(), y = sp.p_cam.y();
  Eigen::Matrix<S, 2, 3> jac;
  jac << fx / z, S(0), -fx * x / (z * z), S(0), fy / z, -fy * y / (z * z);
  sp.cov2d = jac * sp.cov_cam * jac.transpose();
  sp.cov2d(0, 0) += S(cfg.eps2d);
  sp.cov2d(1, 1) += S(cfg.eps2d);

  const S det = sp.cov2d.determinant();
  if (!(det > S(0))) return sp;
  sp.conic << sp.cov2d(1, 1) / det, -sp.cov2d(0, 1) / det,
      -sp.cov2d(1, 0) / det, sp.cov2d(0, 0) / det;
  sp.mean2d << fx * x / z + S(cam.cx), fy * y / z + S(cam.cy);

  const S mid = (sp.cov2d(0, 0) + sp.cov2d(1, 1)) / S(2);
  const S ev = mid + std::sqrt(std::max(S(1e-8), mid * mid - det));
  const S radius = S(cfg.radius_sigmas) * std::sqrt(ev);
  sp.x0 = std::max(0, static_cast<int>(std::floor(sp.mean2d.x() - radius)));
  sp.x1 = std::min(cam.width - 1,
                   static_cast<int>(std::ceil(sp.mean2d.x() + radius)));
  sp.y0 = std::max(0, static_cast<int>(std::floor(sp.mean2d.y() - radius)));
  sp.y1 = std::min(cam.height - 1,
                   static_cast<int>(std::ceil(sp.mean2d.y() + radius)));
  if (sp.x0 > sp.x1 || sp.y0 > sp.y1) return sp;
  sp.visible = true;
  return sp;
}

template <class S> S clamp01(S v) {
  return v < S(0) ? S(0) : (v > S(1) ? S(1) : v);
}

}  // namespace detail

/// Forward rasterization of posed splats. A fully culled splat contributes
/// nothing and receives zero gradient.
template <class S>
RenderOutput<S> rasterize(const MatX3<S>& means, const MatX4<S>& quats,
                          const MatX3<S>& log_scales, const VecX<S>& opacities,
                          const MatX3<S>& colors, const CameraModel& cam,
                          const RigidTransform& extr,
                          const RasterizeConfig& cfg,
                          RasterCache<S>* cache = nullptr) {
  const int n = static_cast<int>(means.rows());
  const Mat3<S> r_cw = extr.R.cast<S>();
  const Vec3<S> t_cw = extr.t.cast<S>();

  RasterCache<S> local;
  RasterCache<S>& c = cache ? *cache : local;
  c.width = cam.width;
  c.height = cam.height;
  c.proj.assign(n, SplatProj<S>());
  c.order.clear();
  c.px.assign(static_cast<size_t>(cam.width) * cam.height, {});

  for (int i = 0; i < n; ++i) {
    c.proj[i] = detail::project_splat<S>(
        means.row(i).transpose(), quats.row(i).transpose(),
        log_scales.row(i).transpose(), cam, r_cw, t_cw, cfg);
    if (c.proj[i].visible) c.order.push_back(i);
  }
  std::sort(c.order.begin(), c.order.end(), [&](int a, int b) {
    const S za = c.proj[a].p_cam.z(), zb = c.proj[b].p_cam.z();
    return za != zb ? za < zb : a < b;
  });

  RenderOutput<S>& out = c.out;
  out.image = Image<S>(cam.height, cam.width, 3, S(0));
  out.depth = Image<S>(cam.height, cam.width, 1, S(0));
  out.alpha = Image<S>(cam.height, cam.width, 1, S(0));
  Image<S> trans(cam.height, cam.width, 1, S(1));
  Image<S> dsum(cam.height, cam.width, 1, S(0));

  for (int oi : c.order) {
    const SplatProj<S>& sp = c.proj[oi];
    const S op = sigmoid(opacities[oi]);
    const Vec3<S> col(detail::clamp01(colors(oi, 0)),
                      detail::clamp01(colors(oi, 1)),
                      detail::clamp01(colors(oi, 2)));
    for (int y = sp.y0; y <= sp.y1; ++y) {
      for (int x = sp.x0; x <= sp.x1; ++x) {
        S& t_px = trans.at(y, x);
        if (t_px < S(cfg.t_stop)) continue;
        const Vec2<S> d(S(x) - sp.mean2d.x(), S(y) - sp.mean2d.y());
        const S power = S(-0.5) * d.dot(sp.conic * d);
        if (power < S(cfg.power_cut)) continue;
        S alpha = op * std::exp(power);
        if (alpha < S(cfg.alpha_min)) continue;
        alpha = std::min(alpha, S(cfg.alpha_max));
        c.px[static_cast<size_t>(y) * cam.width + x].push_back({oi, alpha});
        const S w = t_px * alpha;
        for (int k = 0; k < 3; ++k) out.image.at(y, x, k) += w * col[k];
        dsum.at(y, x) += w * sp.p_cam.z();
        out.alpha.at(y, x) += w;
        t_px *= (S(1) - alpha);
      }
    }
  }
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x)
      out.depth.at(y, x) =
          dsum.at(y, x) / std::max(out.alpha.at(y, x), S(cfg.eps_div));
  return out;
}

/// Gradients of a scalar loss with upstream images d(loss)/d(image, depth,
/// alpha). Returns gradients with respect to the posed parameters; chain
/// through pose_at_backward for canonical and motion parameters.
template <class S>
RasterGrads<S> rasterize_backward(
    const RasterCache<S>& c, const MatX3<S>& means, const MatX4<S>& quats,
    const MatX3<S>& log_scales, const VecX<S>& opacities,
    const MatX3<S>& colors, const CameraModel& cam, const RigidTransform& extr,
    const RasterizeConfig& cfg, const Image<S>& image_bar,
    const Image<S>& depth_bar, const Image<S>& alpha_bar) {
  const int n = static_cast<int>(means.rows());
  RasterGrads<S> g = RasterGrads<S>::zeros(n);
  const Mat3<S> r_cw = extr.R.cast<S>();

  // Per-splat accumulators in projected space.
  MatX<S> mean2d_bar = MatX<S>::Zero(n, 2);
  MatX<S> conic_bar = MatX<S>::Zero(n, 3);  // (00, 01, 11)
  VecX<S> z_bar = VecX<S>::Zero(n);

  std::vector<S> t_stack;
  for (int y = 0; y < c.height; ++y) {
    for (int x = 0; x < c.width; ++x) {
      const auto& contribs = c.px[static_cast<size_t>(y) * c.width + x];
      if (contribs.empty()) continue;
      const S a_out = c.out.alpha.at(y, x);
      const S depth_out = c.out.depth.at(y, x);
      const S denom = std::max(a_out, S(cfg.eps_div));
      const S db = depth_bar.at(y, x);
      const S dsum_bar = db / denom;
      S a_bar = alpha_bar.at(y, x);
      if (a_out > S(cfg.eps_div)) a_bar -= db * depth_out / denom;

      t_stack.resize(contribs.size());
      S t_px = S(1);
      for (size_t i = 0; i < contribs.size(); ++i) {
        t_stack[i] = t_px;
        t_px *= (S(1) - contribs[i].second);
      }

      Vec3<S> suffix_c = Vec3<S>::Zero();
      S suffix_a = S(0), suffix_z = S(0);
      const Vec3<S> ib(image_bar.at(y, x, 0), image_bar.at(y, x, 1),
                       image_bar.at(y, x, 2));
      for (size_t ri = contribs.size(); ri-- > 0;) {
        const int gi = contribs[ri].first;
        const S alpha = contribs[ri].second;
        const S t_i = t_stack[ri];
        const S w = t_i * alpha;
        const SplatProj<S>& sp = c.proj[gi];
        const S z = sp.p_cam.z();
        Vec3<S> col;
        for (int k = 0; k < 3; ++k) {
          col[k] = detail::clamp01(colors(gi, k));
          // Clamp gate: no gradient outside [0, 1].
          if (colors(gi, k) >= S(0) && colors(gi, k) <= S(1))
            g.colors(gi, k) += w * ib[k];
        }
        const S om = S(1) - alpha;
        S alpha_bar_i = ib.dot(t_i * col - suffix_c / om) +
                        a_bar * (t_i - suffix_a / om) +
                        dsum_bar * (t_i * z - suffix_z / om);
        z_bar[gi] += w * dsum_bar;

        suffix_c += w * col;
        suffix_a += w;
        suffix_z += w * z;

        const S op = sigmoid(opacities[gi]);
        const Vec2<S> d(S(x) - sp.mean2d.x(), S(y) - sp.mean2d.y());
        const S power = S(-0.5) * d.dot(sp.conic * d);
        const S gauss = std::exp(power);
        if (op * gauss >= S(cfg.alpha_max)) continue;  // clamp gate
        g.opacities[gi] += alpha_bar_i * gauss * op * (S(1) - op);
        const S gauss_bar = alpha_bar_i * op;
        const S power_bar = gauss_bar * gauss;
        // power = -0.5 d^T conic d
        const Vec2<S> cd = sp.conic * d;
        conic_bar(gi, 0) += power_bar * S(-0.5) * d.x() * d.x();
        conic_bar(gi, 1) += power_bar * S(-1.0) * d.x() * d.y();
        conic_bar(gi, 2) += power_bar * S(-0.5) * d.y() * d.y();
        mean2d_bar(gi, 0) += power_bar * cd.x();
        mean2d_bar(gi, 1) += power_bar * cd.y();
      }
    }
  }

  // Chain projected-space gradients back to splat parameters.
  const S fx = S(cam.fx), fy = S(cam.fy);
  for (int gi : c.order) {
    const SplatProj<S>& sp = c.proj[gi];
    const S x = sp.p_cam.x(), y = sp.p_cam.y(), z = sp.p_cam.z();

    Mat2<S> cb;
    cb << conic_bar(gi, 0), conic_bar(gi, 1) / S(2), conic_bar(gi, 1) / S(2),
        conic_bar(gi, 2);
    // conic = cov2d^-1  =>  d(cov2d) = -conic * d(conic) * conic
    const Mat2<S> cov2d_bar = -sp.conic * cb * sp.conic;

    Eigen::Matrix<S, 2, 3> jac;
    jac << fx / z, S(0), -fx * x / (z * z), S(0), fy / z, -fy * y / (z * z);
    const Mat3<S> cov_cam_bar = jac.transpose() * cov2d_bar * jac;
    const Eigen::Matrix<S, 2, 3> jac_bar =
        S(2) * cov2d_bar * jac * sp.cov_cam;

    Vec3<S> p_cam_bar = Vec3<S>::Zero();
    p_cam_bar.x() += mean2d_bar(gi, 0) * fx / z + jac_bar(0, 2) * (-fx / (z * z));
    p_cam_bar.y() += mean2d_bar(gi, 1) * fy / z + jac_bar(1, 2) * (-fy / (z * z));
    p_cam_bar.z() += -mean2d_bar(gi, 0) * fx * x / (z * z) -
                     mean2d_bar(gi, 1) * fy * y / (z * z) +
                     jac_bar(0, 0) * (-fx / (z * z)) +
                     jac_bar(0, 2) * (S(2) * fx * x / (z * z * z)) +
                     jac_bar(1, 1) * (-fy / (z * z)) +
                     jac_bar(1, 2) * (S(2) * fy * y / (z * z * z));
    p_cam_bar.z() += z_bar[gi];

    const Mat3<S> cov_world_bar = r_cw.transpose() * cov_cam_bar * r_cw;
    const Mat3<S> rot = quat_to_rot<S>(quats.row(gi).transpose());
    const Vec3<S> scale = log_scales.row(gi).transpose().array().exp();
    const Mat3<S> m = rot * scale.asDiagonal();
    const Mat3<S> m_bar = S(2) * cov_world_bar * m;
    const Mat3<S> rot_bar = m_bar * scale.asDiagonal();
    const Mat3<S> rtm = rot.transpose() * m_bar;
    for (int k = 0; k < 3; ++k)
      g.log_scales(gi, k) += rtm(k, k) * scale[k];
    g.quats.row(gi) +=
        quat_to_rot_backward<S>(quats.row(gi).transpose(), rot_bar).transpose();
    g.means.row(gi) += (r_cw.transpose() * p_cam_bar).transpose();
  }
  return g;
}

}  // namespace sdfsplat
