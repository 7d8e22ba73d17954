// Copyright Contributors to the sdfsplat Project
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "sdfsplat/gauss_losses.hpp"
#include "sdfsplat/knn.hpp"
#include "sdfsplat/rng.hpp"
#include "test_util.hpp"

using namespace sdfsplat;
using testutil::fd_derivative;
using testutil::grad_rel_err;

namespace {

RenderOutput<double> random_render(int h, int w, Rng& rng) {
  RenderOutput<double> r;
  r.image = Image<double>(h, w, 3);
  r.depth = Image<double>(h, w, 1);
  r.alpha = Image<double>(h, w, 1);
  for (auto& v : r.image.data) v = rng.uniform();
  for (auto& v : r.depth.data) v = 1.0 + rng.uniform();
  for (auto& v : r.alpha.data) v = rng.uniform();
  return r;
}

Image<uint8_t> checker_mask(int h, int w) {
  Image<uint8_t> m(h, w, 1, 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) m.at(y, x) = ((x / 3 + y / 3) % 2) ? 1 : 0;
  return m;
}

}  // namespace

TEST_CASE("frame losses vanish for a perfect render") {
  Rng rng(3);
  RenderOutput<double> r = random_render(12, 10, rng);
  Image<uint8_t> mask = checker_mask(12, 10);
  Image<double> ref_depth = r.depth;
  FrameLossValues<double> l = frame_losses(r, r.image, ref_depth, mask);
  CHECK(l.img == 0.0);
  CHECK(l.depth == 0.0);
  // Alpha does not match the binary mask, so only image and depth vanish.
  RenderOutput<double> r2 = r;
  for (int y = 0; y < 12; ++y)
    for (int x = 0; x < 10; ++x) r2.alpha.at(y, x) = mask.at(y, x) ? 1.0 : 0.0;
  FrameLossValues<double> l2 = frame_losses(r2, r.image, ref_depth, mask);
  CHECK(l2.mask == 0.0);
}

TEST_CASE("uniform depth offset of 0.5 gives mean squared error 0.25") {
  Rng rng(5);
  RenderOutput<double> r = random_render(9, 9, rng);
  Image<uint8_t> mask = checker_mask(9, 9);
  Image<double> ref_depth = r.depth;
  for (auto& v : r.depth.data) v += 0.5;
  FrameLossValues<double> l = frame_losses(r, r.image, ref_depth, mask);
  CHECK(l.depth == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("masked 0.1 offset gives squared image loss 0.01 and L1 loss 0.1") {
  Rng rng(8);
  const int h = 16, w = 16;
  RenderOutput<double> r = random_render(h, w, rng);
  for (auto& v : r.image.data) v *= 0.5;  // keep +0.1 inside [0,1]
  Image<uint8_t> mask = checker_mask(h, w);
  Image<double> ref = r.image;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (mask.at(y, x))
        for (int c = 0; c < 3; ++c) r.image.at(y, x, c) += 0.1;
  Image<double> ref_depth = r.depth;
  FrameLossValues<double> l = frame_losses(r, ref, ref_depth, mask);
  CHECK(l.img == doctest::Approx(0.01).epsilon(1e-12));

  InitLossValue<double> il = init_loss_gs(r.image, ref, mask);
  CHECK(il.l1 == doctest::Approx(0.1).epsilon(1e-12));
  CHECK_FALSE(il.empty_mask);
}

TEST_CASE("init loss is zero for an exact render and flags an empty mask") {
  Rng rng(13);
  RenderOutput<double> r = random_render(16, 16, rng);
  Image<uint8_t> mask = checker_mask(16, 16);
  InitLossValue<double> exact = init_loss_gs(r.image, r.image, mask);
  CHECK(exact.value == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(exact.ssim_term == doctest::Approx(0.0).epsilon(1e-12));

  Image<uint8_t> empty(16, 16, 1, 0);
  InitLossValue<double> none = init_loss_gs(r.image, r.image, empty);
  CHECK(none.value == 0.0);
  CHECK(none.empty_mask);
}

TEST_CASE("ssim equals one on identical images and stays within [-1, 1]") {
  Rng rng(17);
  Image<double> a(16, 16, 3);
  for (auto& v : a.data) v = rng.uniform();
  CHECK(ssim_mean<double>(a, a) == doctest::Approx(1.0).epsilon(1e-12));

  for (int trial = 0; trial < 5; ++trial) {
    Image<double> b(16, 16, 3);
    for (auto& v : b.data) v = rng.uniform();
    const double s = ssim_mean<double>(a, b);
    CHECK(s >= -1.0);
    CHECK(s <= 1.0);
    CHECK(s < 1.0);
  }
  Image<double> tiny(8, 16, 3, 0.0);
  CHECK_THROWS_AS(ssim_mean<double>(tiny, tiny), SpecError);
}

TEST_CASE("ssim gradient matches finite differences, masked and unmasked") {
  Rng rng(19);
  Image<double> pred(16, 15, 1);
  Image<double> ref(16, 15, 1);
  for (auto& v : pred.data) v = rng.uniform();
  for (auto& v : ref.data) v = rng.uniform();
  Image<uint8_t> mask = checker_mask(16, 15);

  const Image<uint8_t>* variants[] = {nullptr, &mask};
  for (const Image<uint8_t>* m : variants) {
    Image<double> bar(16, 15, 1, 0.0);
    ssim_mean<double>(pred, ref, m, &bar, 1.0);
    auto loss = [&]() { return double(ssim_mean<double>(pred, ref, m)); };
    double worst = 0.0;
    for (int y = 0; y < 16; ++y) {
      for (int x = 0; x < 15; ++x) {
        const double fd = fd_derivative(loss, pred.at(y, x));
        worst = std::max(worst, grad_rel_err(bar.at(y, x), fd));
      }
    }
    CHECK(worst < 1e-6);
  }
}

TEST_CASE("frame and init loss gradients match finite differences") {
  Rng rng(23);
  const int h = 14, w = 13;
  RenderOutput<double> r = random_render(h, w, rng);
  Image<uint8_t> mask = checker_mask(h, w);
  Image<double> ref_img(h, w, 3);
  Image<double> ref_depth(h, w, 1);
  for (auto& v : ref_img.data) v = rng.uniform();
  for (size_t i = 0; i < ref_depth.size(); ++i)
    ref_depth.data[i] = (i % 5 == 0) ? 0.0 : 1.0 + rng.uniform();

  const FrameLossValues<double> wts{0.7, 1.3, 0.5};
  auto loss = [&]() {
    FrameLossValues<double> l = frame_losses(r, ref_img, ref_depth, mask);
    return wts.img * l.img + wts.depth * l.depth + wts.mask * l.mask;
  };
  Image<double> ib(h, w, 3, 0.0), db(h, w, 1, 0.0), ab(h, w, 1, 0.0);
  frame_losses_backward(r, ref_img, ref_depth, mask, wts, ib, db, ab);
  double worst = 0.0;
  for (size_t i = 0; i < r.image.size(); ++i)
    worst = std::max(worst, grad_rel_err(ib.data[i],
                                         fd_derivative(loss, r.image.data[i])));
  for (size_t i = 0; i < r.depth.size(); ++i)
    worst = std::max(worst, grad_rel_err(db.data[i],
                                         fd_derivative(loss, r.depth.data[i])));
  for (size_t i = 0; i < r.alpha.size(); ++i)
    worst = std::max(worst, grad_rel_err(ab.data[i],
                                         fd_derivative(loss, r.alpha.data[i])));
  CHECK(worst < 1e-7);

  // And the combined L1 + structural init loss on a 16x16 crop.
  Image<double> pr(16, 16, 3), rf(16, 16, 3);
  for (auto& v : pr.data) v = rng.uniform();
  for (auto& v : rf.data) v = rng.uniform();
  Image<uint8_t> m2 = checker_mask(16, 16);
  Image<double> bar(16, 16, 3, 0.0);
  init_loss_gs<double>(pr, rf, m2, &bar);
  auto init_loss = [&]() { return init_loss_gs<double>(pr, rf, m2).value; };
  worst = 0.0;
  for (size_t i = 0; i < pr.size(); ++i)
    worst = std::max(worst,
                     grad_rel_err(bar.data[i],
                                  fd_derivative(init_loss, pr.data[i])));
  CHECK(worst < 1e-6);
}

TEST_CASE("global rigid motion leaves the rigidity loss at zero") {
  Rng rng(29);
  const int n = 6;
  GaussianSet<double> gs = GaussianSet<double>::zeros(n);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < 3; ++k) gs.means(i, k) = rng.normal();

  // A shared rotation R and translation factor through a 4-basis motion
  // model: three bases carry the columns of (R - I) with the point's own
  // coordinates as coefficients, the fourth carries the translation.
  const Eigen::AngleAxisd aa(0.4, Vec3d(1.0, 2.0, 0.5).normalized());
  const Mat3d rot = aa.toRotationMatrix();
  const Vec3d tr(0.3, -0.2, 0.15);
  MotionBasis<double> mb = MotionBasis<double>::zeros(4, 2, n);
  for (int k = 0; k < 3; ++k)
    mb.basis_mu[k].row(1) = (rot - Mat3d::Identity()).col(k).transpose();
  mb.basis_mu[3].row(1) = tr.transpose();
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < 3; ++k) mb.coeffs(i, k) = gs.means(i, k);
    mb.coeffs(i, 3) = 1.0;
  }
  PosedGaussians<double> posed = pose_at(gs, mb, 1);
  const Vec3d expect = rot * gs.means.row(2).transpose() + tr;
  CHECK((posed.means.row(2).transpose() - expect).norm() < 1e-12);

  KnnResult<double> nn = knn_search<double>(gs.means, 3);
  CameraModel cam;
  cam.fx = cam.fy = 50;
  cam.cx = cam.cy = 16;
  cam.width = cam.height = 33;
  MotionLossValues<double> l = motion_losses<double>(
      gs, mb, 1, 0, nn.idx, {}, cam, RigidTransform{});
  CHECK(l.rigid < 1e-16);
  CHECK(l.no_tracks);
}

TEST_CASE("zero coefficients give zero sparsity and one-pixel error gives "
          "unit track loss") {
  GaussianSet<double> gs = GaussianSet<double>::zeros(1);
  gs.means.row(0) << 0.1, -0.05, 2.0;
  MotionBasis<double> mb = MotionBasis<double>::zeros(1, 1, 1);
  CameraModel cam;
  cam.fx = cam.fy = 50;
  cam.cx = cam.cy = 16;
  cam.width = cam.height = 33;
  Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> no_nn(1,
                                                                            0);

  // Projected pixel: u = 50 * 0.1 / 2 + 16 = 18.5, v = 50 * -0.05 / 2 + 16.
  TrackObs<double> obs;
  obs.gauss = 0;
  obs.u = 17.5;  // one pixel left of the projection
  obs.v = 14.75;
  MotionLossValues<double> l = motion_losses<double>(
      gs, mb, 0, 0, no_nn, {obs}, cam, RigidTransform{});
  CHECK(l.track == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(l.sparse == 0.0);
}

TEST_CASE("motion loss gradients match finite differences") {
  Rng rng(31);
  const int n = 5, bases = 2, frames = 3, t = 2, canonical_t = 0;
  GaussianSet<double> gs = GaussianSet<double>::zeros(n);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < 3; ++k) gs.means(i, k) = 0.4 * rng.normal();
  gs.means.col(2).array() += 2.5;  // keep everything in front of the camera
  MotionBasis<double> mb = MotionBasis<double>::zeros(bases, frames, n);
  for (int j = 0; j < bases; ++j)
    for (int tt = 0; tt < frames; ++tt)
      for (int k = 0; k < 3; ++k) mb.basis_mu[j](tt, k) = 0.1 * rng.normal();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < bases; ++j) {
      // Keep coefficients away from zero: the sparsity term is an L1.
      const double mag = 0.3 + 0.5 * rng.uniform();
      mb.coeffs(i, j) = rng.uniform() < 0.5 ? -mag : mag;
    }

  CameraModel cam;
  cam.fx = cam.fy = 60;
  cam.cx = cam.cy = 20;
  cam.width = cam.height = 41;
  const RigidTransform extr;
  KnnResult<double> nn = knn_search<double>(gs.means, 2);
  // Observations close to the projections keep the loss magnitude small,
  // which keeps finite-difference roundoff below the tolerance.
  PosedGaussians<double> at_t = pose_at(gs, mb, t);
  std::vector<TrackObs<double>> obs;
  for (int i = 0; i < 3; ++i) {
    const Vec3d p = at_t.means.row(i).transpose();
    TrackObs<double> o;
    o.gauss = i;
    o.u = cam.fx * p.x() / p.z() + cam.cx + rng.normal();
    o.v = cam.fy * p.y() / p.z() + cam.cy + rng.normal();
    o.depth = p.z() + 0.1 * rng.normal();
    o.has_depth = (i != 1);
    obs.push_back(o);
  }

  const MotionLossValues<double> wts{0.7, 1.3, 0.5, false};
  auto loss = [&]() {
    MotionLossValues<double> l = motion_losses<double>(
        gs, mb, t, canonical_t, nn.idx, obs, cam, extr);
    return wts.track * l.track + wts.rigid * l.rigid + wts.sparse * l.sparse;
  };
  GaussianGrads<double> gg = GaussianGrads<double>::zeros(n);
  MotionGrads<double> mg = MotionGrads<double>::zeros(bases, frames, n);
  motion_losses_backward<double>(gs, mb, t, canonical_t, nn.idx, obs, cam,
                                 extr, wts, gg, mg);
  double worst = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < 3; ++k)
      worst = std::max(worst, grad_rel_err(gg.means(i, k),
                                           fd_derivative(loss, gs.means(i, k))));
    for (int j = 0; j < bases; ++j)
      worst = std::max(worst, grad_rel_err(mg.coeffs(i, j),
                                           fd_derivative(loss, mb.coeffs(i, j))));
  }
  for (int j = 0; j < bases; ++j)
    for (int tt = 0; tt < frames; ++tt)
      for (int k = 0; k < 3; ++k)
        worst = std::max(worst,
                         grad_rel_err(mg.basis_mu[j](tt, k),
                                      fd_derivative(loss, mb.basis_mu[j](tt, k))));
  CHECK(worst < 1e-6);
}
