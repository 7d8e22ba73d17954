// Copyright Contributors to the sdfsplat Project
// SPDX-License-Identifier: Apache-2.0
//
// SSIM with an 11x11 Gaussian window (sigma 1.5) and analytic gradients
// with respect to the predicted image. Statistics use zero-padded separable
// filtering, and the score averages only pixels whose window lies fully
// inside the image, so padding never influences the result and the filter
// adjoint is the filter itself.

#pragma once

#include <vector>

#include "sdfsplat/common.hpp"
#include "sdfsplat/image.hpp"

namespace sdfsplat {

inline constexpr int kSsimWindow = 11;
inline constexpr int kSsimBorder = kSsimWindow / 2;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 1e-4;  // (0.01 * range)^2
inline constexpr double kSsimC2 = 9e-4;  // (0.03 * range)^2

namespace detail {

template <class S> std::vector<S> ssim_kernel() {
  std::vector<S> k(kSsimWindow);
  S sum = S(0);
  for (int i = 0; i < kSsimWindow; ++i) {
    const S d = S(i - kSsimBorder);
    k[i] = std::exp(-d * d / S(2.0 * kSsimSigma * kSsimSigma));
    sum += k[i];
  }
  for (auto& v : k) v /= sum;
  return k;
}

// Zero-padded separable filtering of one H x W plane. The kernel is
// symmetric, so this routine is its own adjoint.
template <class S>
void filter_plane(const std::vector<S>& in, int h, int w,
                  const std::vector<S>& kernel, std::vector<S>& tmp,
                  std::vector<S>& out) {
  tmp.assign(in.size(), S(0));
  out.assign(in.size(), S(0));
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      S acc = S(0);
      for (int i = 0; i < kSsimWindow; ++i) {
        const int xx = x + i - kSsimBorder;
        if (xx < 0 || xx >= w) continue;
        acc += kernel[i] * in[static_cast<size_t>(y) * w + xx];
      }
      tmp[static_cast<size_t>(y) * w + x] = acc;
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      S acc = S(0);
      for (int i = 0; i < kSsimWindow; ++i) {
        const int yy = y + i - kSsimBorder;
        if (yy < 0 || yy >= h) continue;
        acc += kernel[i] * tmp[static_cast<size_t>(yy) * w + x];
      }
      out[static_cast<size_t>(y) * w + x] = acc;
    }
  }
}

}  // namespace detail

/// Mean SSIM of `pred` against `ref` over interior pixels, optionally
/// restricted to a mask. When `pred_bar` is given, `upstream` times the
/// gradient of the mean with respect to `pred` is accumulated into it.
/// An empty selection scores 1 (nothing differs on zero pixels).
template <class S>
S ssim_mean(const Image<S>& pred, const Image<S>& ref,
            const Image<uint8_t>* mask = nullptr, Image<S>* pred_bar = nullptr,
            S upstream = S(1)) {
  if (!pred.same_shape(ref))
    throw SpecError("ssim: image shapes differ");
  const int h = pred.height, w = pred.width, ch = pred.channels;
  if (h < kSsimWindow || w < kSsimWindow)
    throw SpecError("ssim: image smaller than the 11x11 window");
  if (mask && (mask->height != h || mask->width != w))
    throw SpecError("ssim: mask shape differs from image");
  if (pred_bar && !pred_bar->same_shape(pred))
    throw SpecError("ssim: gradient buffer shape differs from image");

  const std::vector<S> kernel = detail::ssim_kernel<S>();
  const size_t plane = static_cast<size_t>(h) * w;
  std::vector<S> x(plane), y(plane), xx(plane), yy(plane), xy(plane);
  std::vector<S> mx, my, mxx, myy, mxy, tmp, scratch;

  // First pass: count the selected pixels so the mean weight is known
  // before gradients are written.
  int selected = 0;
  for (int py = kSsimBorder; py < h - kSsimBorder; ++py)
    for (int px = kSsimBorder; px < w - kSsimBorder; ++px)
      if (!mask || mask->at(py, px) != 0) ++selected;
  if (selected == 0) return S(1);
  const S inv_count = S(1) / (S(selected) * S(ch));

  S total = S(0);
  std::vector<S> bmu(plane), bxx(plane), bxy(plane);
  for (int c = 0; c < ch; ++c) {
    for (int py = 0; py < h; ++py) {
      for (int px = 0; px < w; ++px) {
        const size_t i = static_cast<size_t>(py) * w + px;
        x[i] = pred.at(py, px, c);
        y[i] = ref.at(py, px, c);
        xx[i] = x[i] * x[i];
        yy[i] = y[i] * y[i];
        xy[i] = x[i] * y[i];
      }
    }
    detail::filter_plane(x, h, w, kernel, tmp, mx);
    detail::filter_plane(y, h, w, kernel, tmp, my);
    detail::filter_plane(xx, h, w, kernel, tmp, mxx);
    detail::filter_plane(yy, h, w, kernel, tmp, myy);
    detail::filter_plane(xy, h, w, kernel, tmp, mxy);

    if (pred_bar) {
      std::fill(bmu.begin(), bmu.end(), S(0));
      std::fill(bxx.begin(), bxx.end(), S(0));
      std::fill(bxy.begin(), bxy.end(), S(0));
    }
    for (int py = kSsimBorder; py < h - kSsimBorder; ++py) {
      for (int px = kSsimBorder; px < w - kSsimBorder; ++px) {
        if (mask && mask->at(py, px) == 0) continue;
        const size_t i = static_cast<size_t>(py) * w + px;
        const S ux = mx[i], uy = my[i];
        const S a1 = S(2) * ux * uy + S(kSsimC1);
        const S a2 = S(2) * (mxy[i] - ux * uy) + S(kSsimC2);
        const S b1 = ux * ux + uy * uy + S(kSsimC1);
        const S b2 = (mxx[i] - ux * ux) + (myy[i] - uy * uy) + S(kSsimC2);
        const S d = b1 * b2;
        const S score = a1 * a2 / d;
        total += score;
        if (!pred_bar) continue;
        const S sbar = upstream * inv_count;
        bmu[i] = sbar * (S(2) * uy * (a2 - a1) / d -
                         score * (S(2) * ux / b1 - S(2) * ux / b2));
        bxx[i] = sbar * (-score / b2);
        bxy[i] = sbar * (S(2) * a1 / d);
      }
    }
    if (pred_bar) {
      detail::filter_plane(bmu, h, w, kernel, tmp, scratch);
      for (size_t i = 0; i < plane; ++i) {
        const int py = static_cast<int>(i) / w, px = static_cast<int>(i) % w;
        pred_bar->at(py, px, c) += scratch[i];
      }
      detail::filter_plane(bxx, h, w, kernel, tmp, scratch);
      for (size_t i = 0; i < plane; ++i) {
        const int py = static_cast<int>(i) / w, px = static_cast<int>(i) % w;
        pred_bar->at(py, px, c) += S(2) * x[i] * scratch[i];
      }
      detail::filter_plane(bxy, h, w, kernel, tmp, scratch);
      for (size_t i = 0; i < plane; ++i) {
        const int py = static_cast<int>(i) / w, px = static_cast<int>(i) % w;
        pred_bar->at(py, px, c) += y[i] * scratch[i];
      }
    }
  }
  return total * inv_count;
}

}  // namespace sdfsplat
