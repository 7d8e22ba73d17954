// Copyright Contributors to the sdfsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <stdexcept>
#include <string>
#include <vector>

#include "sdfsplat/common.hpp"
#include "sdfsplat/sdf_model.hpp"

namespace sdfsplat {

/// Raised when the sampled field never changes sign, so there is no
/// surface to mesh.
struct EmptyMeshError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Indexed triangle mesh. Faces wind counterclockwise seen from outside
/// (the positive side of the distance field).
struct TriMesh {
  MatX3<double> vertices;
  std::vector<std::array<int, 3>> faces;

  int num_vertices() const { return static_cast<int>(vertices.rows()); }
  int num_faces() const { return static_cast<int>(faces.size()); }
};

/// Marching cubes over the canonical box at `resolution` cells per axis,
/// evaluating the field with timestep-t codes. Crossing vertices are
/// created once per lattice edge and shared by every incident triangle,
/// so surfaces closed inside the box mesh watertight. Throws SpecError
/// on resolution < 1 and EmptyMeshError when no cell straddles zero.
TriMesh extract_mesh(const SdfModel<double>& sdf, int resolution, int t);

/// ASCII PLY export (vertex positions and triangle indices only).
void save_mesh_ply(const std::string& path, const TriMesh& mesh);

}  // namespace sdfsplat
