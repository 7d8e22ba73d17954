// Copyright Contributors to the sdfsplat Project
// SPDX-License-Identifier: Apache-2.0
//
// Ray rendering of the SDF branch: consecutive signed-distance samples
// become segment opacities, composited front to back. The backward pass
// walks the transmittance recurrence in reverse, which stays finite even
// for fully opaque segments.

#pragma once

#include <vector>

#include "sdfsplat/sdf_model.hpp"

namespace sdfsplat {

template <class S> struct RaySampleBatch {
  MatX3<S> origins;      // R x 3
  MatX3<S> dirs;         // R x 3, unit
  MatXR<S> depths;       // R x M ray distances, strictly increasing
  MatX3<S> target_rgb;   // observed color per ray
  VecX<S> target_depth;  // observed ray distance; <= 0 means invalid
  VecX<S> mask_w;        // per-ray mask weight

  int num_rays() const { return static_cast<int>(origins.rows()); }
  int samples_per_ray() const { return static_cast<int>(depths.cols()); }

  void validate() const {
    const int r = num_rays(), m = samples_per_ray();
    if (dirs.rows() != r || depths.rows() != r)
      throw SpecError("ray batch: row counts disagree");
    for (int i = 0; i < r; ++i) {
      if (std::abs(dirs.row(i).norm() - S(1)) > S(1e-6))
        throw SpecError("ray batch: direction " + std::to_string(i) +
                        " is not unit length");
      for (int j = 1; j < m; ++j)
        if (!(depths(i, j) > depths(i, j - 1)))
          throw SpecError("ray batch: sample depths not increasing on ray " +
                          std::to_string(i));
    }
  }
};

/// Transmittance-weighted compositing weights for one ray's opacities:
/// w_i = alpha_i * prod_{k<i} (1 - alpha_k).
template <class S> VecX<S> composite_weights(const VecX<S>& alphas) {
  VecX<S> w(alphas.size());
  S trans = S(1);
  for (int i = 0; i < alphas.size(); ++i) {
    w[i] = trans * alphas[i];
    trans *= S(1) - alphas[i];
  }
  return w;
}

template <class S> struct RayRenderOutput {
  MatX3<S> color;
  VecX<S> depth;
  MatX3<S> normal;  // weighted SDF gradient, normalized; rows valid when
                    // gradients were requested
  VecX<S> wsum;
};

template <class S> struct RayRenderCache {
  SdfCache<S> model_cache;
  MatXR<S> pts;     // flattened R*M x 3 sample points
  MatXR<S> sdirs;   // per-sample directions
  SdfOutputs<S> samples;
  MatXR<S> alphas;  // R x (M-1)
  MatXR<S> weights;
  RayRenderOutput<S> out;
};

/// Renders every ray of the batch at timestep t. Each of the M samples
/// yields an SDF value; the M-1 consecutive pairs yield opacities, and the
/// leading sample of a pair carries its color and depth.
template <class S>
RayRenderOutput<S> volume_render(const SdfModel<S>& m,
                                 const RaySampleBatch<S>& batch, int t,
                                 int active_levels, bool want_normals,
                                 RayRenderCache<S>* cache = nullptr) {
  batch.validate();
  const int r = batch.num_rays(), ms = batch.samples_per_ray();
  RayRenderCache<S> local;
  RayRenderCache<S>& c = cache ? *cache : local;
  c.pts.resize(r * ms, 3);
  c.sdirs.resize(r * ms, 3);
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < ms; ++j) {
      c.pts.row(i * ms + j) =
          batch.origins.row(i) + batch.depths(i, j) * batch.dirs.row(i);
      c.sdirs.row(i * ms + j) = batch.dirs.row(i);
    }
  }
  c.samples = sdf_forward(m, c.pts, t, c.sdirs, want_normals, active_levels,
                          &c.model_cache);

  const S sharp = m.sharpness();
  c.alphas.resize(r, ms - 1);
  c.weights.resize(r, ms - 1);
  RayRenderOutput<S>& out = c.out;
  out.color = MatX3<S>::Zero(r, 3);
  out.depth = VecX<S>::Zero(r);
  out.wsum = VecX<S>::Zero(r);
  if (want_normals) out.normal = MatX3<S>::Zero(r, 3);
  for (int i = 0; i < r; ++i) {
    S trans = S(1);
    Vec3<S> nsum = Vec3<S>::Zero();
    for (int j = 0; j < ms - 1; ++j) {
      const S a = neus_alpha(c.samples.sdf[i * ms + j],
                             c.samples.sdf[i * ms + j + 1], sharp);
      c.alphas(i, j) = a;
      const S w = trans * a;
      c.weights(i, j) = w;
      out.color.row(i) += w * c.samples.color.row(i * ms + j);
      out.depth[i] += w * batch.depths(i, j);
      out.wsum[i] += w;
      if (want_normals) nsum += w * c.samples.grad.row(i * ms + j).transpose();
      trans *= S(1) - a;
    }
    if (want_normals) {
      const S n = nsum.norm();
      if (n > S(1e-12)) out.normal.row(i) = (nsum / n).transpose();
    }
  }
  return out;
}

/// Backward through volume_render for upstream gradients on color and
/// depth. Per-sample SDF and color bars accumulate into `sdf_bar` /
/// `color_bar` (flattened like the cache); the sharpness gradient lands in
/// grads.rho. The caller finishes with sdf_backward using the cache.
template <class S>
void volume_render_backward(const SdfModel<S>& m, const RaySampleBatch<S>& batch,
                            const RayRenderCache<S>& c,
                            const MatX3<S>& out_color_bar,
                            const VecX<S>& out_depth_bar, VecX<S>& sdf_bar,
                            MatX3<S>& color_bar, SdfGrads<S>& grads) {
  const int r = batch.num_rays(), ms = batch.samples_per_ray();
  const S sharp = m.sharpness();
  S sharp_bar = S(0);
  for (int i = 0; i < r; ++i) {
    const Vec3<S> cb = out_color_bar.size() > 0
                           ? Vec3<S>(out_color_bar.row(i).transpose())
                           : Vec3<S>::Zero();
    const S db = out_depth_bar.size() > 0 ? out_depth_bar[i] : S(0);
    // Transmittance values T_j, then a reverse sweep of the recurrence
    // T_{j+1} = T_j (1 - alpha_j).
    VecX<S> trans(ms);  // trans[j] entering sample j
    trans[0] = S(1);
    for (int j = 0; j < ms - 1; ++j)
      trans[j + 1] = trans[j] * (S(1) - c.alphas(i, j));
    S tbar = S(0);  // gradient w.r.t. trans[j+1] during the sweep
    for (int j = ms - 2; j >= 0; --j) {
      const S dw = cb.dot(c.samples.color.row(i * ms + j).transpose()) +
                   db * batch.depths(i, j);
      color_bar.row(i * ms + j) += c.weights(i, j) * cb.transpose();
      S a_bar = trans[j] * dw;
      a_bar -= tbar * trans[j];
      const S t_in_bar = c.alphas(i, j) * dw + tbar * (S(1) - c.alphas(i, j));
      tbar = t_in_bar;

      // alpha = max(0, 1 - phi_next / phi_i) through the sharpened sigmoid.
      const S u_i = c.samples.sdf[i * ms + j];
      const S u_n = c.samples.sdf[i * ms + j + 1];
      const S phi_i = sigmoid(sharp * u_i);
      const S phi_n = sigmoid(sharp * u_n);
      if ((phi_i - phi_n) / std::max(phi_i, S(1e-12)) > S(0)) {
        const S dphi_i = phi_i * (S(1) - phi_i);
        const S dphi_n = phi_n * (S(1) - phi_n);
        sdf_bar[i * ms + j] += a_bar * (phi_n / (phi_i * phi_i)) * sharp *
                               dphi_i;
        sdf_bar[i * ms + j + 1] += -a_bar / phi_i * sharp * dphi_n;
        sharp_bar += a_bar * ((phi_n / (phi_i * phi_i)) * u_i * dphi_i -
                              u_n * dphi_n / phi_i);
      }
    }
  }
  grads.rho += sharp_bar * sigmoid(m.rho);  // softplus derivative
}

}  // namespace sdfsplat
