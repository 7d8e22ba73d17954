// Copyright Contributors to the sdfsplat Project
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "sdfsplat/sdf_losses.hpp"
#include "sdfsplat/sdf_model.hpp"
#include "sdfsplat/volume_render.hpp"
#include "test_util.hpp"

using namespace sdfsplat;
using testutil::fd_derivative;
using testutil::grad_rel_err;

namespace {

SdfArch tiny_arch() {
  SdfArch a;
  a.grid_res = {4, 6};
  a.grid_feat = 2;
  a.def_depth = 1;
  a.def_width = 16;
  a.hyp_depth = 1;
  a.hyp_width = 16;
  a.sdf_depth = 1;
  a.sdf_width = 16;
  a.rgb_depth = 1;
  a.rgb_width = 16;
  a.hyper_dim = 2;
  a.latent_dim = 4;
  a.pe_x_freqs = 2;
  a.pe_dir_freqs = 2;
  a.pretrain_iters = 0;
  return a;
}

Box3<double> unit_box() {
  Box3<double> b;
  b.lo = Vec3d(-1, -1, -1);
  b.hi = Vec3d(1, 1, 1);
  return b;
}

SdfModel<double> tiny_model(int frames, uint64_t seed,
                            const SdfArch& arch_in = tiny_arch()) {
  Rng rng(seed);
  Box3<double> world = unit_box().expanded(0.5);
  return make_sdf_model<double>(arch_in, unit_box(), world, frames, rng);
}

/// Kicks every parameter off its symmetric initialization so gradient
/// checks exercise generic weights.
void scramble(SdfModel<double>& m, Rng& rng, double scale = 0.05) {
  for (auto& p : collect_params(m))
    for (int64_t i = 0; i < p.size; ++i) p.data[i] += scale * rng.normal();
}

MatXR<double> random_points(int n, Rng& rng, double half = 0.9) {
  MatXR<double> x(n, 3);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < 3; ++k) x(i, k) = half * (2.0 * rng.uniform() - 1.0);
  return x;
}

RaySampleBatch<double> small_batch(Rng& rng, int r = 4, int ms = 6) {
  RaySampleBatch<double> b;
  b.origins.resize(r, 3);
  b.dirs.resize(r, 3);
  b.depths.resize(r, ms);
  b.target_rgb.resize(r, 3);
  b.target_depth.resize(r);
  b.mask_w.resize(r);
  for (int i = 0; i < r; ++i) {
    b.origins.row(i) << 0.3 * rng.normal(), 0.3 * rng.normal(), -3.0;
    Vec3d to(0.4 * rng.normal(), 0.4 * rng.normal(), 0.0);
    b.dirs.row(i) = (to - b.origins.row(i).transpose()).normalized();
    for (int j = 0; j < ms; ++j)
      b.depths(i, j) = 2.0 + 0.35 * j + 0.05 * rng.uniform();
    b.target_rgb.row(i) << rng.uniform(), rng.uniform(), rng.uniform();
    b.target_depth[i] = 2.8 + 0.3 * rng.normal();
    b.mask_w[i] = 1.0;
  }
  b.target_depth[1] = -1.0;  // invalid depth ray
  b.mask_w[2] = 0.5;
  return b;
}

}  // namespace

TEST_CASE("residual deformation is the identity before training") {
  SdfModel<double> m = tiny_model(3, 101);
  Rng rng(7);
  MatXR<double> x = random_points(20, rng);
  for (int t = 0; t < 3; ++t) {
    MatXR<double> xc = deform_to_canonical(m, x, t);
    CHECK((xc - x).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("zero latents make the model time-invariant at initialization") {
  SdfModel<double> m = tiny_model(4, 103);
  Rng rng(11);
  MatXR<double> x = random_points(10, rng);
  MatXR<double> dirs(10, 3);
  for (int i = 0; i < 10; ++i)
    dirs.row(i) = Vec3d(rng.normal(), rng.normal(), rng.normal())
                      .normalized()
                      .transpose();
  SdfOutputs<double> ref = sdf_forward(m, x, 0, dirs, true, -1);
  for (int t = 1; t < 4; ++t) {
    SdfOutputs<double> out = sdf_forward(m, x, t, dirs, true, -1);
    CHECK((out.sdf - ref.sdf).cwiseAbs().maxCoeff() == 0.0);
    CHECK((out.color - ref.color).cwiseAbs().maxCoeff() == 0.0);
  }
  // Perturbing one frame's deformation code breaks the invariance.
  m.z(2, 0) = 0.5;
  SdfOutputs<double> bent = sdf_forward(m, x, 2, dirs, false, -1);
  CHECK((bent.sdf - ref.sdf).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("zero grid and zero distance-head weights give a constant field") {
  SdfModel<double> m = tiny_model(2, 105);
  for (auto& lvl : m.grid.data) lvl.setZero();
  for (auto& l : m.mlp_sdf.layers) {
    l.w.setZero();
    l.b.setZero();
  }
  m.mlp_sdf.layers.back().b[0] = 0.37;
  Rng rng(13);
  MatXR<double> x = random_points(30, rng, 1.4);  // some outside the grid box
  SdfOutputs<double> out = sdf_forward(m, x, 0, MatXR<double>(), true, -1);
  CHECK((out.sdf.array() - 0.37).abs().maxCoeff() == 0.0);
  CHECK(out.grad.cwiseAbs().maxCoeff() == 0.0);
  CHECK(neus_alpha(out.sdf[0], out.sdf[1], m.sharpness()) == 0.0);
}

TEST_CASE("color head output lies in the unit cube") {
  SdfModel<double> m = tiny_model(2, 107);
  Rng rng(17);
  scramble(m, rng, 0.5);
  MatXR<double> x = random_points(40, rng);
  MatXR<double> dirs(40, 3);
  for (int i = 0; i < 40; ++i)
    dirs.row(i) = Vec3d(rng.normal(), rng.normal(), rng.normal())
                      .normalized()
                      .transpose();
  SdfOutputs<double> out = sdf_forward(m, x, 1, dirs, false, -1);
  CHECK(out.color.minCoeff() >= 0.0);
  CHECK(out.color.maxCoeff() <= 1.0);
}

TEST_CASE("segment opacity follows the sharpened sigmoid difference") {
  const double s = 15.0;
  CHECK(neus_alpha(0.25, 0.25, s) == 0.0);
  // Entering the surface with a wide sign change saturates.
  CHECK(neus_alpha(10.0 / s, -10.0 / s, s) > 0.99);
  CHECK(neus_alpha(10.0 / s, -10.0 / s, s) <= 1.0);
  // Exiting (SDF increasing) clamps to zero.
  CHECK(neus_alpha(-0.1, 0.2, s) == 0.0);
  Rng rng(19);
  for (int i = 0; i < 200; ++i) {
    const double a =
        neus_alpha(rng.normal(), rng.normal(), 0.1 + 30.0 * rng.uniform());
    CHECK(a >= 0.0);
    CHECK(a <= 1.0);
  }
}

TEST_CASE("grid level unlock schedule") {
  CHECK(progressive_unlock(0, 4) == 1);
  CHECK(progressive_unlock(499, 4) == 1);
  CHECK(progressive_unlock(500, 4) == 2);
  CHECK(progressive_unlock(600, 4) == 2);
  CHECK(progressive_unlock(700, 4) == 3);
  CHECK(progressive_unlock(900, 4) == 4);
  CHECK(progressive_unlock(100000, 4) == 4);
  CHECK(progressive_unlock(100000, 2) == 2);
}

TEST_CASE("compositing weights: opaque single sample takes all, empty takes "
          "none, sums stay in [0, 1]") {
  VecX<double> one(1);
  one << 1.0;
  CHECK(composite_weights(one)[0] == 1.0);
  VecX<double> zeros = VecX<double>::Zero(5);
  CHECK(composite_weights(zeros).sum() == 0.0);
  Rng rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    VecX<double> a(8);
    for (int i = 0; i < 8; ++i) a[i] = rng.uniform();
    VecX<double> w = composite_weights(a);
    CHECK(w.minCoeff() >= 0.0);
    CHECK(w.sum() <= 1.0 + 1e-12);
  }
}

TEST_CASE("constant field renders to zero color, depth, and weight") {
  SdfModel<double> m = tiny_model(2, 109);
  for (auto& lvl : m.grid.data) lvl.setZero();
  for (auto& l : m.mlp_sdf.layers) {
    l.w.setZero();
    l.b.setZero();
  }
  m.mlp_sdf.layers.back().b[0] = 0.2;
  Rng rng(29);
  RaySampleBatch<double> b = small_batch(rng);
  RayRenderOutput<double> out = volume_render(m, b, 0, -1, false);
  CHECK(out.color.cwiseAbs().maxCoeff() == 0.0);
  CHECK(out.depth.cwiseAbs().maxCoeff() == 0.0);
  CHECK(out.wsum.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("ray weights sum to at most one on a scrambled model") {
  SdfModel<double> m = tiny_model(2, 111);
  Rng rng(31);
  scramble(m, rng, 0.4);
  m.rho = 2.0;
  RaySampleBatch<double> b = small_batch(rng, 8, 10);
  RayRenderOutput<double> out = volume_render(m, b, 1, -1, false);
  for (int i = 0; i < 8; ++i) {
    CHECK(out.wsum[i] >= 0.0);
    CHECK(out.wsum[i] <= 1.0 + 1e-12);
  }
}

TEST_CASE("spatial gradient matches central finite differences") {
  SdfModel<double> m = tiny_model(2, 113);
  Rng rng(37);
  scramble(m, rng, 0.3);
  m.z.row(1) = VecX<double>::Constant(m.arch.latent_dim, 0.2).transpose();
  MatXR<double> x = random_points(100, rng, 0.85);
  SdfOutputs<double> out = sdf_forward(m, x, 1, MatXR<double>(), true, -1);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    for (int k = 0; k < 3; ++k) {
      auto f = [&]() {
        return sdf_forward(m, x, 1, MatXR<double>(), false, -1).sdf[i];
      };
      worst = std::max(worst, grad_rel_err(out.grad(i, k),
                                           fd_derivative(f, x(i, k))));
    }
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("monotone extension outside the grid box") {
  SdfModel<double> m = tiny_model(2, 115);
  Rng rng(41);
  scramble(m, rng, 0.3);
  MatXR<double> inside = random_points(5, rng, 0.8);
  MatXR<double> far(2, 3);
  far << 2.0, 0.0, 0.0, -1.5, 2.5, -3.0;

  VecX<double> ext_in = sdf_extended(m, inside, 0);
  VecX<double> plain =
      sdf_forward(m, inside, 0, MatXR<double>(), false, -1).sdf;
  CHECK((ext_in - plain).cwiseAbs().maxCoeff() == 0.0);

  VecX<double> ext_far = sdf_extended(m, far, 0);
  // First point clamps to (1, 0, 0), one unit away.
  MatXR<double> edge(2, 3);
  edge << 1.0, 0.0, 0.0, -1.0, 1.0, -1.0;
  VecX<double> at_edge =
      sdf_forward(m, edge, 0, MatXR<double>(), false, -1).sdf;
  CHECK(ext_far[0] == doctest::Approx(at_edge[0] + 1.0).epsilon(1e-12));
  const double d1 = (far.row(1) - edge.row(1)).norm();
  CHECK(ext_far[1] == doctest::Approx(at_edge[1] + d1).epsilon(1e-12));
}

TEST_CASE("deformation stays within a sampled first-order bound") {
  SdfModel<double> m = tiny_model(2, 117);
  Rng rng(43);
  scramble(m, rng, 0.4);
  m.z(1, 0) = 0.3;
  const Vec3d x0(0.2, -0.1, 0.3);
  MatXR<double> base(1, 3);
  base.row(0) = x0.transpose();
  const MatXR<double> y0 = deform_to_canonical(m, base, 1);

  // Numeric Jacobian at x0, then check nearby displacements obey it.
  Mat3d jac;
  for (int k = 0; k < 3; ++k) {
    MatXR<double> xp = base, xm = base;
    xp(0, k) += 1e-5;
    xm(0, k) -= 1e-5;
    jac.col(k) = (deform_to_canonical(m, xp, 1) - deform_to_canonical(m, xm, 1))
                     .row(0)
                     .transpose() /
                 2e-5;
  }
  const double lip = jac.norm() + 0.1;
  for (int i = 0; i < 20; ++i) {
    Vec3d u(rng.normal(), rng.normal(), rng.normal());
    u = u.normalized() * 1e-3;
    MatXR<double> xs = base;
    xs.row(0) += u.transpose();
    const double moved = (deform_to_canonical(m, xs, 1) - y0).row(0).norm();
    CHECK(moved <= lip * u.norm());
  }
}

TEST_CASE("sphere pretraining produces an inside-negative, outside-positive "
          "field") {
  SdfArch arch = tiny_arch();
  arch.grid_res = {8, 16};
  arch.pretrain_iters = 400;
  arch.pretrain_batch = 256;
  SdfModel<double> m = tiny_model(2, 119, arch);
  MatXR<double> probes(3, 3);
  probes << 0.0, 0.0, 0.0,   // center, radius 1 sphere -> -1
      0.5, 0.0, 0.0,         // halfway out -> -0.5
      0.95, 0.95, 0.95;      // near the corner -> positive
  VecX<double> sdf = sdf_forward(m, probes, 0, MatXR<double>(), false, -1).sdf;
  CHECK(sdf[0] < -0.5);
  CHECK(sdf[1] < 0.0);
  CHECK(sdf[2] > 0.0);
  CHECK(sdf[0] < sdf[1]);
  CHECK(sdf[1] < sdf[2]);
}

TEST_CASE("loss terms are non-negative and vanish in the exact cases") {
  SdfModel<double> m = tiny_model(2, 121);
  Rng rng(47);
  scramble(m, rng, 0.3);
  m.rho = 1.5;
  RaySampleBatch<double> b = small_batch(rng);
  SdfTrunc<double> trunc = SdfTrunc<double>::from_grid(m.grid);
  MatXR<double> surf = random_points(4, rng, 0.7);
  MatXR<double> delta(4, 3);
  for (int i = 0; i < 4; ++i)
    for (int k = 0; k < 3; ++k) delta(i, k) = trunc.delta_std * rng.normal();
  SdfLossBreakdown<double> l =
      sdf_losses<double>(m, b, 0, -1, surf, delta, trunc);
  CHECK(l.rgb >= 0.0);
  CHECK(l.d >= 0.0);
  CHECK(l.sdf >= 0.0);
  CHECK(l.fs >= 0.0);
  CHECK(l.eik >= 0.0);
  CHECK(l.sm >= 0.0);
  CHECK(std::isfinite(l.rgb + l.d + l.sdf + l.fs + l.eik + l.sm));

  // A plane's exact signed distance solves the eikonal equation, and a
  // perturbation of zero has zero smoothness penalty.
  SdfLossBreakdown<double> l2 = sdf_losses<double>(
      m, b, 0, -1, surf, MatXR<double>::Zero(4, 3), trunc);
  CHECK(l2.sm == 0.0);
}

TEST_CASE("free-space term is inactive for positive SDF within the bound") {
  // Evaluate the three-way max directly: phi = b/2 > 0 within the bound
  // gives max(0, e^{-a phi} - 1, phi - b) = 0 since both candidates are
  // negative.
  const double b = 0.4, phi = 0.2, alpha_fs = 12.5;
  const double e = std::exp(-alpha_fs * phi) - 1.0;
  CHECK(e < 0.0);
  CHECK(phi - b < 0.0);
  CHECK(std::max(0.0, std::max(e, phi - b)) == 0.0);
}

TEST_CASE("loss gradients match finite differences for every parameter "
          "group") {
  SdfModel<double> m = tiny_model(3, 123);
  Rng rng(53);
  scramble(m, rng, 0.25);
  m.rho = 1.2;
  for (int t = 0; t < 3; ++t)
    for (int k = 0; k < m.arch.latent_dim; ++k) {
      m.z(t, k) = 0.1 * rng.normal();
      m.a(t, k) = 0.1 * rng.normal();
    }
  RaySampleBatch<double> b = small_batch(rng);
  // A tight band, or every sample lands in the near-surface branch and the
  // free-space and eikonal paths go untested.
  SdfTrunc<double> trunc = SdfTrunc<double>::from_grid(m.grid, 0.25);
  int n_near = 0, n_free = 0, n_behind = 0;
  for (int i = 0; i < b.num_rays(); ++i) {
    if (!(b.target_depth[i] > 0)) continue;
    for (int j = 0; j < b.samples_per_ray(); ++j) {
      const double bound = b.target_depth[i] - b.depths(i, j);
      if (std::abs(bound) <= trunc.eps)
        ++n_near;
      else if (bound > trunc.eps)
        ++n_free;
      else
        ++n_behind;
    }
  }
  REQUIRE(n_near >= 2);
  REQUIRE(n_free >= 2);
  REQUIRE(n_behind >= 1);
  MatXR<double> surf = random_points(3, rng, 0.7);
  MatXR<double> delta(3, 3);
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) delta(i, k) = trunc.delta_std * rng.normal();
  const SdfLossWeights<double> wts{0.9, 0.8, 1.1, 0.7, 0.6, 1.2};

  auto total = [&]() {
    SdfLossBreakdown<double> l =
        sdf_losses<double>(m, b, 1, -1, surf, delta, trunc);
    return wts.rgb * l.rgb + wts.d * l.d + wts.sdf * l.sdf + wts.fs * l.fs +
           wts.eik * l.eik + wts.sm * l.sm;
  };
  SdfGrads<double> g = SdfGrads<double>::zeros_like(m);
  sdf_losses<double>(m, b, 1, -1, surf, delta, trunc, &wts, &g);

  std::vector<ParamRef<double>> params = collect_params(m);
  std::vector<ParamRef<double>> grads = collect_grads(g);
  REQUIRE(params.size() == grads.size());
  double worst = 0.0;
  std::string worst_name;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    REQUIRE(params[pi].size == grads[pi].size);
    for (int64_t i = 0; i < params[pi].size; ++i) {
      const double fd = fd_derivative(total, params[pi].data[i]);
      const double err = grad_rel_err(grads[pi].data[i], fd);
      if (err > worst) {
        worst = err;
        worst_name = params[pi].name;
      }
    }
  }
  INFO("worst group: ", worst_name);
  CHECK(worst < 1e-3);
}
