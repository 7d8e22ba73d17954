// Copyright Contributors to the sdfsplat Project
// SPDX-License-Identifier: Apache-2.0
//
// Exact k-nearest-neighbor search over point sets via a uniform spatial
// hash. Point counts here stay in the tens of thousands, so a grid with
// expanding-shell queries beats a tree for simplicity and is still exact.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <unordered_map>
#include <utility>
#include <vector>

#include "sdfsplat/common.hpp"

namespace sdfsplat {

template <class S> struct KnnResult {
  Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> idx;
  MatXR<S> dist;  // same shape, Euclidean distances

  int k() const { return static_cast<int>(idx.cols()); }
};

namespace detail {

inline int64_t cell_key(int ix, int iy, int iz) {
  // 21 bits per axis, offset to keep coordinates positive.
  const int64_t b = int64_t(1) << 20;
  return ((int64_t(ix) + b) << 42) | ((int64_t(iy) + b) << 21) |
         (int64_t(iz) + b);
}

}  // namespace detail

/// Neighbors of every point among the points themselves, excluding the
/// point itself. Requests for more neighbors than exist are truncated.
template <class S>
KnnResult<S> knn_search(const MatX3<S>& pts, int k) {
  const int n = static_cast<int>(pts.rows());
  KnnResult<S> res;
  const int keff = std::min(k, std::max(0, n - 1));
  res.idx.resize(n, keff);
  res.dist.resize(n, keff);
  if (keff == 0) return res;

  Box3<S> box;
  box.lo = pts.colwise().minCoeff().transpose();
  box.hi = pts.colwise().maxCoeff().transpose();
  const S span = box.extent().maxCoeff();
  // Aim for a handful of points per cell; degenerate spans fall back to a
  // single cell, which degrades to brute force.
  const S cell =
      span > S(0) ? std::max(span / S(std::cbrt(double(n)) + 1.0), S(1e-12))
                  : S(1);

  std::unordered_map<int64_t, std::vector<int>> grid;
  grid.reserve(static_cast<size_t>(n));
  std::vector<int> ci(n), cj(n), ck(n);
  for (int i = 0; i < n; ++i) {
    ci[i] = static_cast<int>(std::floor((pts(i, 0) - box.lo.x()) / cell));
    cj[i] = static_cast<int>(std::floor((pts(i, 1) - box.lo.y()) / cell));
    ck[i] = static_cast<int>(std::floor((pts(i, 2) - box.lo.z()) / cell));
    grid[detail::cell_key(ci[i], cj[i], ck[i])].push_back(i);
  }

  std::vector<std::pair<S, int>> best;
  for (int q = 0; q < n; ++q) {
    best.clear();
    const Vec3<S> p = pts.row(q).transpose();
    S worst = std::numeric_limits<S>::max();
    for (int ring = 0;; ++ring) {
      // All unvisited points are at least (ring - 1) cells away.
      if (static_cast<int>(best.size()) == keff &&
          worst <= S(ring - 1) * cell * S(ring - 1) * cell)
        break;
      if (S(ring - 1) * cell > span + cell) break;
      bool any_cell = false;
      for (int dx = -ring; dx <= ring; ++dx) {
        for (int dy = -ring; dy <= ring; ++dy) {
          for (int dz = -ring; dz <= ring; ++dz) {
            if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != ring)
              continue;
            auto it = grid.find(
                detail::cell_key(ci[q] + dx, cj[q] + dy, ck[q] + dz));
            if (it == grid.end()) continue;
            any_cell = true;
            for (int i : it->second) {
              if (i == q) continue;
              const S d2 = (pts.row(i) - pts.row(q)).squaredNorm();
              if (static_cast<int>(best.size()) < keff) {
                best.emplace_back(d2, i);
                if (static_cast<int>(best.size()) == keff) {
                  std::make_heap(best.begin(), best.end());
                  worst = best.front().first;
                }
              } else if (d2 < worst) {
                std::pop_heap(best.begin(), best.end());
                best.back() = {d2, i};
                std::push_heap(best.begin(), best.end());
                worst = best.front().first;
              }
            }
          }
        }
      }
      (void)any_cell;
    }
    std::sort(best.begin(), best.end());
    for (int j = 0; j < keff; ++j) {
      res.idx(q, j) = best[j].second;
      res.dist(q, j) = std::sqrt(best[j].first);
    }
  }
  return res;
}

/// Neighbors of external query points among `pts` (self matches allowed).
template <class S>
KnnResult<S> knn_search_points(const MatX3<S>& pts, const MatX3<S>& queries,
                               int k) {
  const int n = static_cast<int>(pts.rows());
  const int m = static_cast<int>(queries.rows());
  KnnResult<S> res;
  const int keff = std::min(k, n);
  res.idx.resize(m, keff);
  res.dist.resize(m, keff);
  if (keff == 0) return res;
  // Query sets here are small (guidance cells, track seeds); brute force.
  std::vector<std::pair<S, int>> d(n);
  for (int q = 0; q < m; ++q) {
    for (int i = 0; i < n; ++i)
      d[i] = {(pts.row(i) - queries.row(q)).squaredNorm(), i};
    std::partial_sort(d.begin(), d.begin() + keff, d.end());
    for (int j = 0; j < keff; ++j) {
      res.idx(q, j) = d[j].second;
      res.dist(q, j) = std::sqrt(d[j].first);
    }
  }
  return res;
}

}  // namespace sdfsplat
