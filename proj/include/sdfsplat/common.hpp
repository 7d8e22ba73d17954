// Copyright Contributors to the sdfsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace sdfsplat {

template <class S> using Vec2 = Eigen::Matrix<S, 2, 1>;
template <class S> using Vec3 = Eigen::Matrix<S, 3, 1>;
template <class S> using Vec4 = Eigen::Matrix<S, 4, 1>;
template <class S> using Mat2 = Eigen::Matrix<S, 2, 2>;
template <class S> using Mat3 = Eigen::Matrix<S, 3, 3>;
template <class S> using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <class S> using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

// Row-major N x k blocks so serialized buffers read as one record per row.
template <class S>
using MatX3 = Eigen::Matrix<S, Eigen::Dynamic, 3, Eigen::RowMajor>;
template <class S>
using MatX4 = Eigen::Matrix<S, Eigen::Dynamic, 4, Eigen::RowMajor>;
template <class S>
using MatXR = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Vec2d = Vec2<double>;
using Vec3d = Vec3<double>;
using Vec3f = Vec3<float>;
using Mat3d = Mat3<double>;

/// Raised on malformed or missing input files.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Raised on invalid fixture specs, configs, or CLI arguments.
struct SpecError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Raised when optimization produces non-finite values.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Axis-aligned box; canonical domain, fixture bounds, grid extents.
template <class S> struct Box3 {
  Vec3<S> lo = Vec3<S>::Zero();
  Vec3<S> hi = Vec3<S>::Zero();

  Vec3<S> extent() const { return hi - lo; }
  Vec3<S> center() const { return (lo + hi) * S(0.5); }
  S min_extent() const { return extent().minCoeff(); }
  bool contains(const Vec3<S>& p) const {
    return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all();
  }
  Vec3<S> clamp(const Vec3<S>& p) const {
    return p.cwiseMax(lo).cwiseMin(hi);
  }
  /// Grow by `frac` of the extent on every side.
  Box3 expanded(S frac) const {
    Vec3<S> pad = extent() * frac;
    return Box3{lo - pad, hi + pad};
  }
  void extend(const Vec3<S>& p) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  template <class T> Box3<T> cast() const {
    return Box3<T>{lo.template cast<T>(), hi.template cast<T>()};
  }
};

using Box3d = Box3<double>;
using Box3f = Box3<float>;

template <class S> S sigmoid(S x) {
  return x >= S(0) ? S(1) / (S(1) + std::exp(-x))
                   : std::exp(x) / (S(1) + std::exp(x));
}

template <class S> S softplus(S x) {
  return x > S(20) ? x : std::log1p(std::exp(x));
}

template <class S> S inv_softplus(S y) {
  return y > S(20) ? y : std::log(std::expm1(y));
}

// Quaternions use (w, x, y, z) order throughout.

template <class S> Mat3<S> quat_to_rot(const Vec4<S>& q) {
  const S w = q[0], x = q[1], y = q[2], z = q[3];
  Mat3<S> r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

/// Accumulates d(loss)/dq for a unit quaternion given d(loss)/dR.
template <class S>
Vec4<S> quat_to_rot_backward(const Vec4<S>& q, const Mat3<S>& rbar) {
  const S w = q[0], x = q[1], y = q[2], z = q[3];
  Mat3<S> dw, dx, dy, dz;
  dw << 0, -z, y, z, 0, -x, -y, x, 0;
  dx << 0, y, z, y, -2 * x, -w, z, w, -2 * x;
  dy << -2 * y, x, w, x, 0, z, -w, z, -2 * y;
  dz << -2 * z, -w, x, w, -2 * z, y, x, y, 0;
  Vec4<S> qbar;
  qbar[0] = S(2) * (rbar.array() * dw.array()).sum();
  qbar[1] = S(2) * (rbar.array() * dx.array()).sum();
  qbar[2] = S(2) * (rbar.array() * dy.array()).sum();
  qbar[3] = S(2) * (rbar.array() * dz.array()).sum();
  return qbar;
}

template <class S> Vec4<S> quat_mul(const Vec4<S>& a, const Vec4<S>& b) {
  return Vec4<S>(a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
                 a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
                 a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
                 a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]);
}

template <class S> Vec4<S> rot_to_quat(const Mat3<S>& m) {
  Eigen::Quaternion<S> eq(m);
  if (eq.w() < S(0)) eq.coeffs() = -eq.coeffs();
  return Vec4<S>(eq.w(), eq.x(), eq.y(), eq.z());
}

/// d(loss)/d(raw q) given d(loss)/d(q / |q|).
template <class S>
Vec4<S> normalize_backward(const Vec4<S>& q_raw, const Vec4<S>& qhat_bar) {
  const S n = q_raw.norm();
  const Vec4<S> qhat = q_raw / n;
  return (qhat_bar - qhat * qhat.dot(qhat_bar)) / n;
}

}  // namespace sdfsplat
