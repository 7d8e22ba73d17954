// Copyright Contributors to the sdfsplat Project
// SPDX-License-Identifier: Apache-2.0

#include "sdfsplat/knn.hpp"
#include "sdfsplat/scaffold.hpp"

namespace sdfsplat {

void init_gaussians(const Scaffold& s, int bases, int frames, Rng& rng,
                    GaussianSet<double>* gs, MotionBasis<double>* mb) {
  const int n = s.size();
  if (n < 1) throw SpecError("init_gaussians: empty scaffold");
  *gs = GaussianSet<double>::zeros(n);
  gs->means = s.points;
  gs->colors = s.colors;
  gs->opacities.setConstant(0.1);  // pre-sigmoid

  const int k = std::min(3, n - 1);
  if (k > 0) {
    const MatX3<double> pts = s.points;
    const KnnResult<double> nn = knn_search(pts, k);
    for (int i = 0; i < n; ++i) {
      const double mean_d = nn.dist.row(i).mean();
      gs->log_scales.row(i).setConstant(std::log(std::max(mean_d, 1e-9)));
    }
  } else {
    gs->log_scales.setConstant(std::log(1e-2));
  }

  *mb = MotionBasis<double>::zeros(bases, frames, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < bases; ++j) mb->coeffs(i, j) = 1e-4 * rng.normal();
}

}  // namespace sdfsplat
