#pragma once

#include <string>

#include "isolab/grid.hpp"

namespace isolab {

// Triangulated OBJ surface of three ambient coordinates of an n=2 map field
// over the valid grid points. `coords` are 1-based component indices.
// Vertex count equals the number of valid grid points; quads whose four
// corners are valid split into two triangles.
void export_obj(const std::string& path, const GridField& f, int cx, int cy, int cz);

struct MeshStats {
  long long vertices = 0;
  long long faces = 0;
};
MeshStats mesh_stats(const GridField& f);

}  // namespace isolab
