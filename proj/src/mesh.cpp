#include "isolab/mesh.hpp"

#include <fstream>
#include <vector>

namespace isolab {

namespace {

std::vector<long long> vertex_ids(const GridField& f, long long* count) {
  std::vector<long long> id(size_t(f.grid.num_points()), -1);
  long long next = 0;
  for_each_valid(f.grid, [&](long long p, const std::array<int, 3>&) { id[size_t(p)] = next++; });
  *count = next;
  return id;
}

}  // namespace

MeshStats mesh_stats(const GridField& f) {
  MeshStats s;
  std::vector<long long> id = vertex_ids(f, &s.vertices);
  const int N = f.grid.points_per_axis;
  for (int iy = 0; iy + 1 < N; ++iy)
    for (int ix = 0; ix + 1 < N; ++ix) {
      long long p00 = flatten(f.grid, {ix, iy, 0});
      long long p10 = flatten(f.grid, {ix + 1, iy, 0});
      long long p01 = flatten(f.grid, {ix, iy + 1, 0});
      long long p11 = flatten(f.grid, {ix + 1, iy + 1, 0});
      if (id[p00] >= 0 && id[p10] >= 0 && id[p01] >= 0 && id[p11] >= 0) s.faces += 2;
    }
  return s;
}

void export_obj(const std::string& path, const GridField& f, int cx, int cy, int cz) {
  if (f.grid.n != 2 || f.kind != FieldKind::Map)
    throw Error(ErrorCode::config, "export_obj: expected an n=2 map field");
  for (int c : {cx, cy, cz})
    if (c < 1 || c > f.components)
      throw Error(ErrorCode::config, "export_obj: coordinate index out of range");

  std::ofstream o(path);
  if (!o) throw Error(ErrorCode::io, "export_obj: cannot open " + path);
  o.precision(17);

  long long nv = 0;
  std::vector<long long> id = vertex_ids(f, &nv);
  for_each_valid(f.grid, [&](long long p, const std::array<int, 3>&) {
    o << "v " << f.at(p, cx - 1) << " " << f.at(p, cy - 1) << " " << f.at(p, cz - 1) << "\n";
  });

  const int N = f.grid.points_per_axis;
  for (int iy = 0; iy + 1 < N; ++iy)
    for (int ix = 0; ix + 1 < N; ++ix) {
      long long p00 = flatten(f.grid, {ix, iy, 0});
      long long p10 = flatten(f.grid, {ix + 1, iy, 0});
      long long p01 = flatten(f.grid, {ix, iy + 1, 0});
      long long p11 = flatten(f.grid, {ix + 1, iy + 1, 0});
      if (id[p00] < 0 || id[p10] < 0 || id[p01] < 0 || id[p11] < 0) continue;
      o << "f " << id[p00] + 1 << " " << id[p10] + 1 << " " << id[p11] + 1 << "\n";
      o << "f " << id[p00] + 1 << " " << id[p11] + 1 << " " << id[p01] + 1 << "\n";
    }
  if (!o) throw Error(ErrorCode::io, "export_obj: write failed");
}

}  // namespace isolab
