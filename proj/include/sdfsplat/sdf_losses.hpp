// Copyright Contributors to the sdfsplat Project
// SPDX-License-Identifier: Apache-2.0
//
// Loss suite for the SDF branch. Each ray carries an observed color, mask
// weight, and (when valid, > 0) an observed ray distance d_r. Samples are
// supervised through the bound b = d_r - s: inside the truncation band the
// SDF must match b, in front of the band it must stay positive (with an
// exponential penalty for going negative) and below b; behind the band it
// is left free. Eikonal and smoothness terms regularize the gradient
// field.

#pragma once

#include <vector>

#include "sdfsplat/volume_render.hpp"

namespace sdfsplat {

/// Resolution-linked truncation constants.
template <class S> struct SdfTrunc {
  S eps;        // near-surface band half-width, meters
  S alpha_fs;   // free-space exponential sharpness
  S delta_std;  // smoothness perturbation std, meters

  static SdfTrunc from_grid(const FeatureGrid<S>& g, S eps_override = S(0)) {
    SdfTrunc t;
    const S voxel = g.finest_voxel();
    t.eps = eps_override > S(0) ? eps_override : S(5) * voxel;
    t.alpha_fs = S(5) / t.eps;
    t.delta_std = voxel;
    return t;
  }
};

template <class S> struct SdfLossBreakdown {
  S rgb = S(0), d = S(0), sdf = S(0), fs = S(0), eik = S(0), sm = S(0);
};

template <class S> struct SdfLossWeights {
  S rgb = S(10), d = S(1), sdf = S(10), fs = S(2), eik = S(0.1), sm = S(1);
};

/// Geometric interpolation between schedule endpoints at progress
/// p in [0, 1].
template <class S> S schedule_decay(S start, S end, S progress) {
  const S p = std::min(std::max(progress, S(0)), S(1));
  return start * std::pow(end / start, p);
}

/// Evaluates all SDF loss terms at timestep t; with `grads` given, also
/// accumulates the gradient of the weight-scaled total.
/// `surf_pts` are depth-backprojected surface points and `surf_delta`
/// their sampled perturbations for the smoothness term.
template <class S>
SdfLossBreakdown<S> sdf_losses(const SdfModel<S>& m,
                               const RaySampleBatch<S>& batch, int t,
                               int active_levels, const MatXR<S>& surf_pts,
                               const MatXR<S>& surf_delta,
                               const SdfTrunc<S>& trunc,
                               const SdfLossWeights<S>* weights = nullptr,
                               SdfGrads<S>* grads = nullptr) {
  SdfLossBreakdown<S> out;
  const int r = batch.num_rays(), ms = batch.samples_per_ray();
  RayRenderCache<S> rc;
  const RayRenderOutput<S> render =
      volume_render(m, batch, t, active_levels, /*want_normals=*/true, &rc);

  // Rendered color and depth against per-ray targets.
  S mask_sum = S(0), mask_sum_d = S(0);
  VecX<S> rgb_err(r), d_err(r);
  for (int i = 0; i < r; ++i) {
    rgb_err[i] = (render.color.row(i) - batch.target_rgb.row(i)).norm();
    out.rgb += batch.mask_w[i] * rgb_err[i];
    mask_sum += batch.mask_w[i];
    if (batch.target_depth[i] > S(0)) {
      d_err[i] = render.depth[i] - batch.target_depth[i];
      out.d += batch.mask_w[i] * std::abs(d_err[i]);
      mask_sum_d += batch.mask_w[i];
    } else {
      d_err[i] = S(0);
    }
  }
  if (mask_sum > S(0)) out.rgb /= mask_sum;
  if (mask_sum_d > S(0)) out.d /= mask_sum_d;

  // Bound supervision per sample.
  int n_near = 0, n_free = 0;
  for (int i = 0; i < r; ++i) {
    if (!(batch.target_depth[i] > S(0))) continue;
    for (int j = 0; j < ms; ++j) {
      const S b = batch.target_depth[i] - batch.depths(i, j);
      const S phi = rc.samples.sdf[i * ms + j];
      if (std::abs(b) <= trunc.eps) {
        out.sdf += std::abs(phi - b);
        ++n_near;
      } else if (b > trunc.eps) {
        const S e = std::exp(-trunc.alpha_fs * phi) - S(1);
        out.fs += std::max(S(0), std::max(e, phi - b));
        const S gn = rc.samples.grad.row(i * ms + j).norm();
        out.eik += (S(1) - gn) * (S(1) - gn);
        ++n_free;
      }
    }
  }
  if (n_near > 0) out.sdf /= S(n_near);
  if (n_free > 0) {
    out.fs /= S(n_free);
    out.eik /= S(n_free);
  }

  // Smoothness on backprojected surface points.
  const int n_surf = static_cast<int>(surf_pts.rows());
  SdfCache<S> surf_cache;
  SdfOutputs<S> surf_out;
  if (n_surf > 0) {
    MatXR<S> stacked(2 * n_surf, 3);
    stacked.topRows(n_surf) = surf_pts;
    stacked.bottomRows(n_surf) = surf_pts + surf_delta;
    surf_out = sdf_forward(m, stacked, t, MatXR<S>(), true, active_levels,
                           &surf_cache);
    for (int i = 0; i < n_surf; ++i)
      out.sm +=
          (surf_out.grad.row(i) - surf_out.grad.row(n_surf + i)).squaredNorm();
    out.sm /= S(n_surf);
  }

  if (!grads || !weights) return out;

  // Backward: render-space bars first.
  MatX3<S> color_out_bar = MatX3<S>::Zero(r, 3);
  VecX<S> depth_out_bar = VecX<S>::Zero(r);
  for (int i = 0; i < r; ++i) {
    if (mask_sum > S(0) && rgb_err[i] > S(1e-12))
      color_out_bar.row(i) = weights->rgb * batch.mask_w[i] / mask_sum *
                             (render.color.row(i) - batch.target_rgb.row(i)) /
                             rgb_err[i];
    if (batch.target_depth[i] > S(0) && mask_sum_d > S(0) &&
        d_err[i] != S(0))
      depth_out_bar[i] = weights->d * batch.mask_w[i] / mask_sum_d *
                         (d_err[i] > S(0) ? S(1) : S(-1));
  }
  VecX<S> sdf_bar = VecX<S>::Zero(r * ms);
  MatX3<S> sample_color_bar = MatX3<S>::Zero(r * ms, 3);
  volume_render_backward(m, batch, rc, color_out_bar, depth_out_bar, sdf_bar,
                         sample_color_bar, *grads);

  MatX3<S> grad_bar = MatX3<S>::Zero(r * ms, 3);
  for (int i = 0; i < r; ++i) {
    if (!(batch.target_depth[i] > S(0))) continue;
    for (int j = 0; j < ms; ++j) {
      const S b = batch.target_depth[i] - batch.depths(i, j);
      const S phi = rc.samples.sdf[i * ms + j];
      if (std::abs(b) <= trunc.eps) {
        if (phi != b)
          sdf_bar[i * ms + j] += weights->sdf / S(n_near) *
                                 (phi > b ? S(1) : S(-1));
      } else if (b > trunc.eps) {
        const S e = std::exp(-trunc.alpha_fs * phi) - S(1);
        const S lin = phi - b;
        if (e >= lin && e > S(0)) {
          sdf_bar[i * ms + j] += weights->fs / S(n_free) * (-trunc.alpha_fs) *
                                 std::exp(-trunc.alpha_fs * phi);
        } else if (lin > e && lin > S(0)) {
          sdf_bar[i * ms + j] += weights->fs / S(n_free);
        }
        const S gn = rc.samples.grad.row(i * ms + j).norm();
        if (gn > S(1e-12))
          grad_bar.row(i * ms + j) += weights->eik / S(n_free) * S(-2) *
                                      (S(1) - gn) *
                                      rc.samples.grad.row(i * ms + j) / gn;
      }
    }
  }
  sdf_backward(m, rc.model_cache, sdf_bar, grad_bar, sample_color_bar,
               *grads);

  if (n_surf > 0) {
    MatX3<S> sg_bar = MatX3<S>::Zero(2 * n_surf, 3);
    for (int i = 0; i < n_surf; ++i) {
      const MatX3<S> diff =
          (surf_out.grad.row(i) - surf_out.grad.row(n_surf + i));
      sg_bar.row(i) += weights->sm / S(n_surf) * S(2) * diff;
      sg_bar.row(n_surf + i) -= weights->sm / S(n_surf) * S(2) * diff;
    }
    sdf_backward(m, surf_cache, VecX<S>(), sg_bar, MatX3<S>(), *grads);
  }
  return out;
}

}  // namespace sdfsplat
