// Copyright Contributors to the sdfsplat Project
// SPDX-License-Identifier: Apache-2.0
//
// Photometric, geometric, and motion losses for the splat optimization
// phase. Masked losses normalize by the masked pixel count so sparse
// objects keep a stable loss scale; the mask-vs-alpha loss runs over every
// pixel so empty space is pushed transparent.

#pragma once

#include <vector>

#include "sdfsplat/gaussian_set.hpp"
#include "sdfsplat/rasterizer.hpp"
#include "sdfsplat/ssim.hpp"

namespace sdfsplat {

template <class S> struct FrameLossValues {
  S img = S(0);    // masked mean squared RGB error
  S depth = S(0);  // mean squared depth error over masked, valid pixels
  S mask = S(0);   // mean squared alpha-vs-mask error over all pixels
};

template <class S>
FrameLossValues<S> frame_losses(const RenderOutput<S>& render,
                                const Image<S>& ref_image,
                                const Image<S>& ref_depth,
                                const Image<uint8_t>& mask) {
  const int h = render.image.height, w = render.image.width;
  if (ref_image.height != h || ref_image.width != w ||
      mask.height != h || mask.width != w)
    throw SpecError("frame_losses: resolution mismatch");
  FrameLossValues<S> out;
  int n_mask = 0, n_depth = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const bool in_mask = mask.at(y, x) != 0;
      const S m = in_mask ? S(1) : S(0);
      const S de = render.alpha.at(y, x) - m;
      out.mask += de * de;
      if (!in_mask) continue;
      ++n_mask;
      for (int c = 0; c < 3; ++c) {
        const S e = render.image.at(y, x, c) - ref_image.at(y, x, c);
        out.img += e * e;
      }
      const S dref = ref_depth.at(y, x);
      if (dref > S(0)) {
        ++n_depth;
        const S e = render.depth.at(y, x) - dref;
        out.depth += e * e;
      }
    }
  }
  if (n_mask > 0) out.img /= S(3 * n_mask);
  if (n_depth > 0) out.depth /= S(n_depth);
  out.mask /= S(h) * S(w);
  return out;
}

/// Accumulates `weights`-scaled gradients of the three frame losses into
/// the render-space gradient buffers.
template <class S>
void frame_losses_backward(const RenderOutput<S>& render,
                           const Image<S>& ref_image, const Image<S>& ref_depth,
                           const Image<uint8_t>& mask,
                           const FrameLossValues<S>& weights,
                           Image<S>& image_bar, Image<S>& depth_bar,
                           Image<S>& alpha_bar) {
  const int h = render.image.height, w = render.image.width;
  int n_mask = 0, n_depth = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (mask.at(y, x) == 0) continue;
      ++n_mask;
      if (ref_depth.at(y, x) > S(0)) ++n_depth;
    }
  }
  const S wi = n_mask > 0 ? weights.img / S(3 * n_mask) : S(0);
  const S wd = n_depth > 0 ? weights.depth / S(n_depth) : S(0);
  const S wm = weights.mask / (S(h) * S(w));
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const bool in_mask = mask.at(y, x) != 0;
      const S m = in_mask ? S(1) : S(0);
      alpha_bar.at(y, x) += S(2) * wm * (render.alpha.at(y, x) - m);
      if (!in_mask) continue;
      for (int c = 0; c < 3; ++c)
        image_bar.at(y, x, c) +=
            S(2) * wi * (render.image.at(y, x, c) - ref_image.at(y, x, c));
      const S dref = ref_depth.at(y, x);
      if (dref > S(0))
        depth_bar.at(y, x) += S(2) * wd * (render.depth.at(y, x) - dref);
    }
  }
}

template <class S> struct InitLossValue {
  S value = S(0);
  S l1 = S(0);         // masked mean absolute RGB error
  S ssim_term = S(0);  // (1 - SSIM) / 2 over the masked interior
  bool empty_mask = false;
};

inline constexpr double kInitL1Weight = 0.8;
inline constexpr double kInitSsimWeight = 0.2;

/// Masked L1 plus structural term used while fitting splats to the
/// canonical window. Optionally accumulates d(value)/d(render) into
/// `render_bar`.
template <class S>
InitLossValue<S> init_loss_gs(const Image<S>& render, const Image<S>& ref,
                              const Image<uint8_t>& mask,
                              Image<S>* render_bar = nullptr) {
  if (!render.same_shape(ref) || render.height != mask.height ||
      render.width != mask.width)
    throw SpecError("init_loss_gs: resolution mismatch");
  InitLossValue<S> out;
  int n_mask = 0;
  for (int y = 0; y < render.height; ++y)
    for (int x = 0; x < render.width; ++x)
      if (mask.at(y, x) != 0) ++n_mask;
  if (n_mask == 0) {
    out.empty_mask = true;
    return out;
  }
  const S inv = S(1) / S(3 * n_mask);
  for (int y = 0; y < render.height; ++y) {
    for (int x = 0; x < render.width; ++x) {
      if (mask.at(y, x) == 0) continue;
      for (int c = 0; c < 3; ++c) {
        const S e = render.at(y, x, c) - ref.at(y, x, c);
        out.l1 += std::abs(e) * inv;
        if (render_bar)
          render_bar->at(y, x, c) +=
              S(kInitL1Weight) * inv * (e > S(0) ? S(1) : (e < S(0) ? S(-1) : S(0)));
      }
    }
  }
  // d(value)/d(ssim) = -kInitSsimWeight / 2.
  const S ssim = ssim_mean<S>(render, ref, &mask, render_bar,
                              S(-0.5 * kInitSsimWeight));
  out.ssim_term = (S(1) - ssim) / S(2);
  out.value = S(kInitL1Weight) * out.l1 + S(kInitSsimWeight) * out.ssim_term;
  return out;
}

/// One matched 2D track observation at some timestep: the splat bound to
/// the track, the observed pixel, and the sensor depth sampled there.
template <class S> struct TrackObs {
  int gauss = -1;
  S u = S(0), v = S(0);
  S depth = S(0);
  bool has_depth = false;
};

template <class S> struct MotionLossValues {
  S track = S(0);   // mean squared pixel + depth error over observations
  S rigid = S(0);   // mean squared neighbor-distance change vs canonical
  S sparse = S(0);  // mean absolute motion coefficient
  bool no_tracks = false;
};

template <class S>
MotionLossValues<S> motion_losses(
    const GaussianSet<S>& gs, const MotionBasis<S>& mb, int t, int canonical_t,
    const Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>&
        rigid_nn,
    const std::vector<TrackObs<S>>& obs, const CameraModel& cam,
    const RigidTransform& extr) {
  MotionLossValues<S> out;
  const int n = gs.size();
  const PosedGaussians<S> at_t = pose_at(gs, mb, t);
  const PosedGaussians<S> at_o = pose_at(gs, mb, canonical_t);
  const Mat3<S> r_cw = extr.R.cast<S>();
  const Vec3<S> t_cw = extr.t.cast<S>();

  int n_track = 0;
  for (const TrackObs<S>& o : obs) {
    const Vec3<S> p = r_cw * at_t.means.row(o.gauss).transpose() + t_cw;
    if (!(p.z() > S(1e-4))) continue;
    ++n_track;
    const S du = S(cam.fx) * p.x() / p.z() + S(cam.cx) - o.u;
    const S dv = S(cam.fy) * p.y() / p.z() + S(cam.cy) - o.v;
    out.track += du * du + dv * dv;
    if (o.has_depth) {
      const S dz = p.z() - o.depth;
      out.track += dz * dz;
    }
  }
  if (n_track > 0)
    out.track /= S(n_track);
  else
    out.no_tracks = true;

  const int kr = static_cast<int>(rigid_nn.cols());
  if (n > 0 && kr > 0) {
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < kr; ++j) {
        const int nb = rigid_nn(i, j);
        const S dt = (at_t.means.row(i) - at_t.means.row(nb)).norm();
        const S dn = (at_o.means.row(i) - at_o.means.row(nb)).norm();
        out.rigid += (dt - dn) * (dt - dn);
      }
    }
    out.rigid /= S(n) * S(kr);
  }
  if (mb.coeffs.size() > 0)
    out.sparse = mb.coeffs.cwiseAbs().sum() / S(mb.coeffs.size());
  return out;
}

/// `weights`-scaled gradients of the motion losses, accumulated through
/// both the observed and canonical poses.
template <class S>
void motion_losses_backward(
    const GaussianSet<S>& gs, const MotionBasis<S>& mb, int t, int canonical_t,
    const Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>&
        rigid_nn,
    const std::vector<TrackObs<S>>& obs, const CameraModel& cam,
    const RigidTransform& extr, const MotionLossValues<S>& weights,
    GaussianGrads<S>& ggrad, MotionGrads<S>& mgrad) {
  const int n = gs.size();
  const PosedGaussians<S> at_t = pose_at(gs, mb, t);
  const PosedGaussians<S> at_o = pose_at(gs, mb, canonical_t);
  const Mat3<S> r_cw = extr.R.cast<S>();
  const Vec3<S> t_cw = extr.t.cast<S>();
  MatX3<S> bar_t = MatX3<S>::Zero(n, 3);
  MatX3<S> bar_o = MatX3<S>::Zero(n, 3);

  int n_track = 0;
  for (const TrackObs<S>& o : obs) {
    const Vec3<S> p = r_cw * at_t.means.row(o.gauss).transpose() + t_cw;
    if (p.z() > S(1e-4)) ++n_track;
  }
  if (n_track > 0) {
    const S wt = weights.track / S(n_track);
    for (const TrackObs<S>& o : obs) {
      const Vec3<S> p = r_cw * at_t.means.row(o.gauss).transpose() + t_cw;
      if (!(p.z() > S(1e-4))) continue;
      const S fx = S(cam.fx), fy = S(cam.fy), z = p.z();
      const S du = fx * p.x() / z + S(cam.cx) - o.u;
      const S dv = fy * p.y() / z + S(cam.cy) - o.v;
      Vec3<S> pbar(S(2) * wt * du * fx / z, S(2) * wt * dv * fy / z,
                   -S(2) * wt * (du * fx * p.x() + dv * fy * p.y()) / (z * z));
      if (o.has_depth) pbar.z() += S(2) * wt * (z - o.depth);
      bar_t.row(o.gauss) += (r_cw.transpose() * pbar).transpose();
    }
  }

  const int kr = static_cast<int>(rigid_nn.cols());
  if (n > 0 && kr > 0) {
    const S wr = weights.rigid / (S(n) * S(kr));
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < kr; ++j) {
        const int nb = rigid_nn(i, j);
        const Vec3<S> et =
            (at_t.means.row(i) - at_t.means.row(nb)).transpose();
        const Vec3<S> eo =
            (at_o.means.row(i) - at_o.means.row(nb)).transpose();
        const S dt = et.norm(), dn = eo.norm();
        const S g = S(2) * wr * (dt - dn);
        const Vec3<S> gi = g * et / std::max(dt, S(1e-12));
        const Vec3<S> go = -g * eo / std::max(dn, S(1e-12));
        bar_t.row(i) += gi.transpose();
        bar_t.row(nb) -= gi.transpose();
        bar_o.row(i) += go.transpose();
        bar_o.row(nb) -= go.transpose();
      }
    }
  }

  const MatX4<S> qzero = MatX4<S>::Zero(n, 4);
  pose_at_backward(gs, mb, t, at_t, bar_t, qzero, ggrad, mgrad);
  pose_at_backward(gs, mb, canonical_t, at_o, bar_o, qzero, ggrad, mgrad);
  if (mb.coeffs.size() > 0) {
    const S ws = weights.sparse / S(mb.coeffs.size());
    mgrad.coeffs.array() += ws * mb.coeffs.array().sign();
  }
}

}  // namespace sdfsplat
