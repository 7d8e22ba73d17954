// Copyright Contributors to the sdfsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "sdfsplat/common.hpp"

namespace sdfsplat {

/// Canonical-frame splat parameters. Opacities are stored pre-sigmoid;
/// scales are stored as logs; colors are plain RGB clamped at render time.
template <class S> struct GaussianSet {
  MatX3<S> means;
  MatX4<S> quats;  // unit (w, x, y, z)
  MatX3<S> log_scales;
  VecX<S> opacities;
  MatX3<S> colors;
  std::vector<int64_t> ids;  // stable identifiers for the event log
  int64_t next_id = 0;

  int size() const { return static_cast<int>(means.rows()); }

  static GaussianSet zeros(int n) {
    GaussianSet g;
    g.means = MatX3<S>::Zero(n, 3);
    g.quats = MatX4<S>::Zero(n, 4);
    g.quats.col(0).setOnes();
    g.log_scales = MatX3<S>::Zero(n, 3);
    g.opacities = VecX<S>::Zero(n);
    g.colors = MatX3<S>::Zero(n, 3);
    g.ids.resize(n);
    for (int i = 0; i < n; ++i) g.ids[i] = i;
    g.next_id = n;
    return g;
  }

  /// Keeps rows where `keep[i]` is true.
  void filter(const std::vector<char>& keep) {
    const int n = size();
    int m = 0;
    for (int i = 0; i < n; ++i) m += keep[i] ? 1 : 0;
    GaussianSet out = zeros(m);
    out.ids.clear();
    int j = 0;
    for (int i = 0; i < n; ++i) {
      if (!keep[i]) continue;
      out.means.row(j) = means.row(i);
      out.quats.row(j) = quats.row(i);
      out.log_scales.row(j) = log_scales.row(i);
      out.opacities[j] = opacities[i];
      out.colors.row(j) = colors.row(i);
      out.ids.push_back(ids[i]);
      ++j;
    }
    out.next_id = next_id;
    *this = std::move(out);
  }

  /// Appends one splat and returns its freshly assigned id.
  int64_t push_back(const Vec3<S>& mean, const Vec4<S>& quat,
                    const Vec3<S>& log_scale, S opacity, const Vec3<S>& color) {
    const int n = size();
    means.conservativeResize(n + 1, 3);
    quats.conservativeResize(n + 1, 4);
    log_scales.conservativeResize(n + 1, 3);
    opacities.conservativeResize(n + 1);
    colors.conservativeResize(n + 1, 3);
    means.row(n) = mean.transpose();
    quats.row(n) = quat.transpose();
    log_scales.row(n) = log_scale.transpose();
    opacities[n] = opacity;
    colors.row(n) = color.transpose();
    ids.push_back(next_id);
    return next_id++;
  }

  template <class T> GaussianSet<T> cast() const {
    GaussianSet<T> g;
    g.means = means.template cast<T>();
    g.quats = quats.template cast<T>();
    g.log_scales = log_scales.template cast<T>();
    g.opacities = opacities.template cast<T>();
    g.colors = colors.template cast<T>();
    g.ids = ids;
    g.next_id = next_id;
    return g;
  }
};

/// Shared low-rank motion model: per-basis trajectories over T frames and
/// per-splat mixing coefficients.
template <class S> struct MotionBasis {
  int num_frames = 0;
  std::vector<MatX3<S>> basis_mu;   // each T x 3
  std::vector<MatX4<S>> basis_rot;  // each T x 4
  MatXR<S> coeffs;                  // N x B

  int num_bases() const { return static_cast<int>(basis_mu.size()); }

  static MotionBasis zeros(int bases, int frames, int n) {
    MotionBasis m;
    m.num_frames = frames;
    m.basis_mu.assign(bases, MatX3<S>::Zero(frames, 3));
    m.basis_rot.assign(bases, MatX4<S>::Zero(frames, 4));
    m.coeffs = MatXR<S>::Zero(n, bases);
    return m;
  }

  /// Appends one coefficient row for a freshly added splat.
  void append_coeff_row(const VecX<S>& row) {
    const int n = static_cast<int>(coeffs.rows());
    coeffs.conservativeResize(n + 1, Eigen::NoChange);
    coeffs.row(n) = row.transpose();
  }

  /// Keeps coefficient rows of surviving splats; mirrors GaussianSet::filter.
  void filter_coeff_rows(const std::vector<char>& keep) {
    const int n = static_cast<int>(coeffs.rows());
    int m = 0;
    for (int i = 0; i < n; ++i) m += keep[i] ? 1 : 0;
    MatXR<S> out(m, coeffs.cols());
    int j = 0;
    for (int i = 0; i < n; ++i)
      if (keep[i]) out.row(j++) = coeffs.row(i);
    coeffs = std::move(out);
  }

  template <class T> MotionBasis<T> cast() const {
    MotionBasis<T> m;
    m.num_frames = num_frames;
    for (const auto& b : basis_mu) m.basis_mu.push_back(b.template cast<T>());
    for (const auto& b : basis_rot) m.basis_rot.push_back(b.template cast<T>());
    m.coeffs = coeffs.template cast<T>();
    return m;
  }
};

/// Splat parameters posed at one timestep, with the pre-normalization
/// quaternions backward needs.
template <class S> struct PosedGaussians {
  MatX3<S> means;      // N x 3
  MatX4<S> quats;      // N x 4, unit
  MatX4<S> raw_quats;  // before normalization
};

template <class S> struct GaussianGrads {
  MatX3<S> means;
  MatX4<S> quats;
  MatX3<S> log_scales;
  VecX<S> opacities;
  MatX3<S> colors;

  static GaussianGrads zeros(int n) {
    GaussianGrads g;
    g.means = MatX3<S>::Zero(n, 3);
    g.quats = MatX4<S>::Zero(n, 4);
    g.log_scales = MatX3<S>::Zero(n, 3);
    g.opacities = VecX<S>::Zero(n);
    g.colors = MatX3<S>::Zero(n, 3);
    return g;
  }
};

template <class S> struct MotionGrads {
  std::vector<MatX3<S>> basis_mu;
  std::vector<MatX4<S>> basis_rot;
  MatXR<S> coeffs;

  static MotionGrads zeros(int bases, int frames, int n) {
    MotionGrads m;
    m.basis_mu.assign(bases, MatX3<S>::Zero(frames, 3));
    m.basis_rot.assign(bases, MatX4<S>::Zero(frames, 4));
    m.coeffs = MatXR<S>::Zero(n, bases);
    return m;
  }
};

/// Means and orientations at timestep t:
///   mu_i(t) = mu_i + sum_j c_ij * b_mu_j(t)
///   q_i(t)  = normalize(q_i + sum_j c_ij * b_rot_j(t))
template <class S>
PosedGaussians<S> pose_at(const GaussianSet<S>& gs, const MotionBasis<S>& mb,
                          int t) {
  if (t < 0 || t >= mb.num_frames)
    throw SpecError("pose_at: t=" + std::to_string(t) +
                    " outside [0, " + std::to_string(mb.num_frames) + ")");
  const int n = gs.size();
  PosedGaussians<S> out;
  out.means = gs.means;
  out.raw_quats = gs.quats;
  for (int j = 0; j < mb.num_bases(); ++j) {
    const Eigen::Matrix<S, 1, 3> bmu = mb.basis_mu[j].row(t);
    const Eigen::Matrix<S, 1, 4> brot = mb.basis_rot[j].row(t);
    out.means.noalias() += mb.coeffs.col(j) * bmu;
    out.raw_quats.noalias() += mb.coeffs.col(j) * brot;
  }
  out.quats.resize(n, 4);
  for (int i = 0; i < n; ++i) {
    const Vec4<S> q = out.raw_quats.row(i).transpose();
    const S norm = q.norm();
    if (!(norm > S(1e-12)))
      throw NumericalError("pose_at: degenerate quaternion at index " +
                           std::to_string(i));
    out.quats.row(i) = (q / norm).transpose();
  }
  return out;
}

/// Accumulates gradients of a loss through pose_at. `quats_bar` is the
/// gradient with respect to the unit quaternions.
template <class S>
void pose_at_backward(const GaussianSet<S>& gs, const MotionBasis<S>& mb,
                      int t, const PosedGaussians<S>& posed,
                      const MatX3<S>& means_bar, const MatX4<S>& quats_bar,
                      GaussianGrads<S>& ggrad, MotionGrads<S>& mgrad) {
  const int n = gs.size();
  MatX4<S> raw_bar(n, 4);
  for (int i = 0; i < n; ++i) {
    const Vec4<S> q_raw = posed.raw_quats.row(i).transpose();
    const Vec4<S> qb = quats_bar.row(i).transpose();
    raw_bar.row(i) = normalize_backward(q_raw, qb).transpose();
  }
  ggrad.means += means_bar;
  ggrad.quats += raw_bar;
  for (int j = 0; j < mb.num_bases(); ++j) {
    mgrad.basis_mu[j].row(t) += mb.coeffs.col(j).transpose() * means_bar;
    mgrad.basis_rot[j].row(t) += mb.coeffs.col(j).transpose() * raw_bar;
    mgrad.coeffs.col(j) +=
        means_bar * mb.basis_mu[j].row(t).transpose() +
        raw_bar * mb.basis_rot[j].row(t).transpose();
  }
}

}  // namespace sdfsplat
