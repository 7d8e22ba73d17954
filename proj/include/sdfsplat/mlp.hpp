// Copyright Contributors to the sdfsplat Project
// SPDX-License-Identifier: Apache-2.0
//
// Small fully-connected networks with tanh hidden activations, evaluated
// on row batches. Forward passes optionally carry K directional tangents
// (a JVP per batch row), and the backward pass differentiates through both
// the values and the tangents, which is what gradient-based losses on the
// SDF's spatial gradient require.

#pragma once

#include <string>
#include <vector>

#include "sdfsplat/adam.hpp"
#include "sdfsplat/common.hpp"
#include "sdfsplat/rng.hpp"

namespace sdfsplat {

template <class S> struct Linear {
  MatXR<S> w;  // out x in
  VecX<S> b;   // out
};

/// `depth` hidden tanh layers of `width`, then a linear head.
template <class S> struct Mlp {
  std::vector<Linear<S>> layers;

  int in_dim() const { return static_cast<int>(layers.front().w.cols()); }
  int out_dim() const { return static_cast<int>(layers.back().w.rows()); }

  template <class T> Mlp<T> cast() const {
    Mlp<T> m;
    for (const auto& l : layers)
      m.layers.push_back({l.w.template cast<T>(), l.b.template cast<T>()});
    return m;
  }
};

template <class S>
Mlp<S> make_mlp(int in, int width, int depth, int out, Rng& rng,
                bool zero_last = false) {
  Mlp<S> m;
  int prev = in;
  for (int l = 0; l < depth + 1; ++l) {
    const int cur = (l == depth) ? out : width;
    Linear<S> lin;
    lin.w.resize(cur, prev);
    lin.b = VecX<S>::Zero(cur);
    const S bound = S(1.0 / std::sqrt(double(prev)));
    for (int i = 0; i < cur; ++i)
      for (int j = 0; j < prev; ++j)
        lin.w(i, j) = S((2.0 * rng.uniform() - 1.0)) * bound;
    if (zero_last && l == depth) lin.w.setZero();
    m.layers.push_back(std::move(lin));
    prev = cur;
  }
  return m;
}

template <class S> Mlp<S> zero_like(const Mlp<S>& m) {
  Mlp<S> z;
  for (const auto& l : m.layers)
    z.layers.push_back({MatXR<S>::Zero(l.w.rows(), l.w.cols()),
                        VecX<S>::Zero(l.b.size())});
  return z;
}

/// Stashed per-layer inputs and tangent pre-activations for the backward
/// pass. xs[l] is the input of layer l; xs.back() is the network output.
template <class S> struct MlpCache {
  std::vector<MatXR<S>> xs;
  std::vector<std::vector<MatXR<S>>> dxs;  // [layer][tangent]
  std::vector<std::vector<MatXR<S>>> dzs;  // hidden pre-activation tangents
};

/// Evaluates the network on `x` (rows are batch entries) with optional
/// tangent rows `dx` propagated alongside. Outputs land in
/// cache.xs.back() / cache.dxs.back().
template <class S>
void mlp_forward(const Mlp<S>& m, const MatXR<S>& x,
                 const std::vector<MatXR<S>>& dx, MlpCache<S>& cache) {
  const int nl = static_cast<int>(m.layers.size());
  const size_t kt = dx.size();
  cache.xs.assign(nl + 1, MatXR<S>());
  cache.dxs.assign(nl + 1, std::vector<MatXR<S>>(kt));
  cache.dzs.assign(nl, std::vector<MatXR<S>>(kt));
  cache.xs[0] = x;
  for (size_t k = 0; k < kt; ++k) cache.dxs[0][k] = dx[k];

  for (int l = 0; l < nl; ++l) {
    const Linear<S>& lin = m.layers[l];
    MatXR<S> z = cache.xs[l] * lin.w.transpose();
    z.rowwise() += lin.b.transpose();
    std::vector<MatXR<S>>& dz = cache.dzs[l];
    for (size_t k = 0; k < kt; ++k)
      dz[k].noalias() = cache.dxs[l][k] * lin.w.transpose();
    if (l + 1 < nl) {
      cache.xs[l + 1] = z.array().tanh();
      // da = (1 - a^2) dz
      for (size_t k = 0; k < kt; ++k)
        cache.dxs[l + 1][k] =
            (S(1) - cache.xs[l + 1].array().square()) * dz[k].array();
    } else {
      cache.xs[l + 1] = std::move(z);
      for (size_t k = 0; k < kt; ++k) cache.dxs[l + 1][k] = dz[k];
    }
  }
}

/// Accumulates parameter gradients given upstream gradients on the output
/// (`y_bar`) and on each output tangent (`dy_bar`). Returns gradients on
/// the input and input tangents through the same chain, including the
/// second-order terms the tangent path induces on the value path.
template <class S>
void mlp_backward(const Mlp<S>& m, const MlpCache<S>& cache,
                  const MatXR<S>& y_bar, const std::vector<MatXR<S>>& dy_bar,
                  Mlp<S>& grad, MatXR<S>& x_bar,
                  std::vector<MatXR<S>>& dx_bar) {
  const int nl = static_cast<int>(m.layers.size());
  const size_t kt = cache.dxs[0].size();
  MatXR<S> cur = y_bar;
  std::vector<MatXR<S>> dcur(dy_bar.begin(), dy_bar.end());
  if (dcur.empty() && kt > 0)
    dcur.assign(kt, MatXR<S>::Zero(y_bar.rows(), y_bar.cols()));

  for (int l = nl - 1; l >= 0; --l) {
    const Linear<S>& lin = m.layers[l];
    MatXR<S> z_bar;
    std::vector<MatXR<S>> dz_bar(kt);
    if (l + 1 < nl) {
      const auto& a = cache.xs[l + 1];
      const auto one_m_a2 = (S(1) - a.array().square()).eval();
      z_bar = (cur.array() * one_m_a2).matrix();
      // The tangent path da = (1 - a^2) dz reads a(z); its adjoint adds
      // -2 a (1 - a^2) dz per tangent to the value path.
      for (size_t k = 0; k < kt; ++k) {
        z_bar.array() += dcur[k].array() * S(-2) * a.array() * one_m_a2 *
                         cache.dzs[l][k].array();
        dz_bar[k] = (dcur[k].array() * one_m_a2).matrix();
      }
    } else {
      z_bar = std::move(cur);
      for (size_t k = 0; k < kt; ++k) dz_bar[k] = std::move(dcur[k]);
    }

    grad.layers[l].b += z_bar.colwise().sum().transpose();
    grad.layers[l].w.noalias() += z_bar.transpose() * cache.xs[l];
    for (size_t k = 0; k < kt; ++k)
      grad.layers[l].w.noalias() += dz_bar[k].transpose() * cache.dxs[l][k];

    cur.noalias() = z_bar * lin.w;
    dcur.resize(kt);
    for (size_t k = 0; k < kt; ++k) dcur[k].noalias() = dz_bar[k] * lin.w;
  }
  x_bar = std::move(cur);
  dx_bar = std::move(dcur);
}

template <class S>
void collect_mlp_params(Mlp<S>& m, const std::string& prefix,
                        std::vector<ParamRef<S>>& out) {
  for (size_t l = 0; l < m.layers.size(); ++l) {
    out.push_back({m.layers[l].w.data(),
                   static_cast<int64_t>(m.layers[l].w.size()),
                   prefix + ".w" + std::to_string(l)});
    out.push_back({m.layers[l].b.data(),
                   static_cast<int64_t>(m.layers[l].b.size()),
                   prefix + ".b" + std::to_string(l)});
  }
}

}  // namespace sdfsplat
