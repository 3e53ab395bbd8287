#include "isolab/grid.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

namespace isolab {

void GridSpec::validate() const {
  if (n < 1 || n > 3) throw Error(ErrorCode::config, "grid dimension must be 1, 2 or 3");
  if (points_per_axis < 5) throw Error(ErrorCode::config, "grid needs at least 5 points per axis");
  if (spacing <= 0.0) throw Error(ErrorCode::config, "grid spacing must be positive");
  if (radius <= 0.0) throw Error(ErrorCode::config, "grid radius must be positive");
  if (spacing * (points_per_axis - 1) + 1e-12 < 2.0 * radius)
    throw Error(ErrorCode::config, "grid does not cover the ball: spacing*(points-1) < 2*radius");
}

GridSpec make_grid(int n, int points_per_axis, double radius, std::array<double, 3> center) {
  GridSpec g;
  g.n = n;
  g.points_per_axis = points_per_axis;
  g.radius = radius;
  g.spacing = 2.0 * radius / (points_per_axis - 1);
  g.center = center;
  g.validate();
  return g;
}

Eigen::MatrixXd GridField::sym_matrix(long long p) const {
  const int n = grid.n;
  Eigen::MatrixXd m(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) m(i, j) = m(j, i) = sym_at(p, i, j);
  return m;
}

void GridField::set_sym_matrix(long long p, const Eigen::MatrixXd& m) {
  const int n = grid.n;
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) sym_at(p, i, j) = 0.5 * (m(i, j) + m(j, i));
}

static GridField make_field(const GridSpec& g, FieldKind kind, int comps) {
  g.validate();
  GridField f;
  f.grid = g;
  f.kind = kind;
  f.components = comps;
  f.samples.assign(size_t(g.num_points()) * comps, 0.0);
  return f;
}

GridField make_scalar(const GridSpec& g) { return make_field(g, FieldKind::Scalar, 1); }
GridField make_map(const GridSpec& g, int m) { return make_field(g, FieldKind::Map, m); }
GridField make_sym(const GridSpec& g) { return make_field(g, FieldKind::SymTensor, sym_components(g.n)); }
GridField make_full(const GridSpec& g) { return make_field(g, FieldKind::Map, g.n * g.n); }

bool is_valid(const GridSpec& g, const std::array<int, 3>& idx) {
  double r2 = 0.0;
  for (int a = 0; a < g.n; ++a) {
    double x = g.coord(a, idx[a]) - g.center[a];
    r2 += x * x;
    if (std::abs(x) > g.half_extent() - g.margin_cells * g.spacing + 1e-12 * g.spacing)
      return false;
  }
  return r2 <= g.radius * g.radius * (1.0 + 1e-12);
}

long long count_valid(const GridSpec& g) {
  long long c = 0;
  for_each_valid(g, [&](long long, const std::array<int, 3>&) { ++c; });
  return c;
}

GridField partial(const GridField& f, int axis) {
  const GridSpec& g = f.grid;
  if (axis < 0 || axis >= g.n) throw Error(ErrorCode::config, "partial: axis out of range");
  // Sym tensors differentiate componentwise on the stored upper triangle.
  if (2.0 * g.radius / g.spacing < 4.0)
    throw Error(ErrorCode::config, "partial: fewer than 5 points per axis inside current radius");

  GridField out = f;
  out.grid.radius = g.radius - 2.0 * g.spacing;
  out.grid.margin_cells = g.margin_cells + 2;
  if (out.grid.radius <= 0.0) throw Error(ErrorCode::domain, "partial: domain exhausted");

  const int N = g.points_per_axis;
  long long stride = 1;
  for (int a = 0; a < axis; ++a) stride *= N;
  const double inv12h = 1.0 / (12.0 * g.spacing);
  const int C = f.components;
  const long long total = g.num_points();

  std::fill(out.samples.begin(), out.samples.end(), 0.0);
  for (long long p = 0; p < total; ++p) {
    int ia = int((p / stride) % N);
    if (ia < 2 || ia > N - 3) continue;
    const double* s = f.samples.data() + p * C;
    double* d = out.samples.data() + p * C;
    const long long o1 = stride * C, o2 = 2 * stride * C;
    for (int c = 0; c < C; ++c)
      d[c] = (-s[c + o2] + 8.0 * s[c + o1] - 8.0 * s[c - o1] + s[c - o2]) * inv12h;
  }
  return out;
}

MetricField pullback(const GridField& f) {
  const int n = f.grid.n;
  const int m = f.components;
  if (f.kind != FieldKind::Map || m < n)
    throw Error(ErrorCode::config, "pullback: expected a map with at least n components");

  std::vector<GridField> df;
  df.reserve(n);
  for (int a = 0; a < n; ++a) df.push_back(partial(f, a));

  MetricField out = make_sym(df[0].grid);
  out.grid.radius = df[0].grid.radius;
  const long long total = f.grid.num_points();
  for (long long p = 0; p < total; ++p) {
    for (int i = 0; i < n; ++i) {
      const double* di = df[i].samples.data() + p * m;
      for (int j = i; j < n; ++j) {
        const double* dj = df[j].samples.data() + p * m;
        double s = 0.0;
        for (int c = 0; c < m; ++c) s += di[c] * dj[c];
        out.sym_at(p, i, j) = s;
      }
    }
  }
  return out;
}

GridField sym(const GridField& full) {
  const int n = full.grid.n;
  if (full.components != n * n)
    throw Error(ErrorCode::config, "sym: expected a full n*n matrix field");
  GridField out = make_sym(full.grid);
  const long long total = full.grid.num_points();
  for (long long p = 0; p < total; ++p)
    for (int i = 0; i < n; ++i)
      for (int j = i; j < n; ++j)
        out.sym_at(p, i, j) = 0.5 * (full.at(p, i * n + j) + full.at(p, j * n + i));
  return out;
}

double min_eigenvalue(const MetricField& g) {
  if (g.kind != FieldKind::SymTensor)
    throw Error(ErrorCode::config, "min_eigenvalue: expected a sym-tensor field");
  const int n = g.grid.n;
  double best = std::numeric_limits<double>::infinity();
  if (n == 1) {
    for_each_valid(g.grid, [&](long long p, const std::array<int, 3>&) {
      best = std::min(best, g.at(p, 0));
    });
    return best;
  }
  if (n == 2) {
    for_each_valid(g.grid, [&](long long p, const std::array<int, 3>&) {
      const double a = g.sym_at(p, 0, 0), b = g.sym_at(p, 0, 1), c = g.sym_at(p, 1, 1);
      const double mid = 0.5 * (a + c);
      const double d = std::hypot(0.5 * (a - c), b);
      best = std::min(best, mid - d);
    });
    return best;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es;
  for_each_valid(g.grid, [&](long long p, const std::array<int, 3>&) {
    Eigen::Matrix3d m;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) m(i, j) = g.sym_at(p, i, j);
    es.computeDirect(m, Eigen::EigenvaluesOnly);
    best = std::min(best, es.eigenvalues()(0));
  });
  return best;
}

GridField axpby(double a, const GridField& f, double b, const GridField& g) {
  if (f.components != g.components || f.grid.num_points() != g.grid.num_points())
    throw Error(ErrorCode::config, "axpby: field shapes differ");
  GridField out = f;
  out.grid.radius = std::min(f.grid.radius, g.grid.radius);
  out.grid.margin_cells = std::max(f.grid.margin_cells, g.grid.margin_cells);
  for (size_t i = 0; i < out.samples.size(); ++i)
    out.samples[i] = a * f.samples[i] + b * g.samples[i];
  return out;
}

GridField constant_sym(const GridSpec& g, const Eigen::MatrixXd& value) {
  GridField out = make_sym(g);
  const long long total = g.num_points();
  for (long long p = 0; p < total; ++p) out.set_sym_matrix(p, value);
  return out;
}

double sup_norm(const GridField& f) {
  double m = 0.0;
  const int C = f.components;
  for_each_valid(f.grid, [&](long long p, const std::array<int, 3>&) {
    const double* s = f.samples.data() + p * C;
    for (int c = 0; c < C; ++c) m = std::max(m, std::abs(s[c]));
  });
  return m;
}

// --- CIGF container ---------------------------------------------------------
// header: magic "CIGF", version u32, kind u8, n u8, components u16,
// points_per_axis u32, spacing f64, radius f64, center n x f64,
// then samples as little-endian f64, row-major point order, component-contiguous.

static void put(std::ofstream& o, const void* p, size_t n) {
  o.write(reinterpret_cast<const char*>(p), std::streamsize(n));
}
static void get(std::ifstream& i, void* p, size_t n) {
  i.read(reinterpret_cast<char*>(p), std::streamsize(n));
  if (!i) throw Error(ErrorCode::io, "cigf: truncated file");
}

void write_cigf(const std::string& path, const GridField& f) {
  std::ofstream o(path, std::ios::binary);
  if (!o) throw Error(ErrorCode::io, "cigf: cannot open " + path + " for writing");
  o.write("CIGF", 4);
  uint32_t version = 1;
  put(o, &version, 4);
  uint8_t kind = uint8_t(f.kind), n = uint8_t(f.grid.n);
  put(o, &kind, 1);
  put(o, &n, 1);
  uint16_t comps = uint16_t(f.components);
  put(o, &comps, 2);
  uint32_t ppa = uint32_t(f.grid.points_per_axis);
  put(o, &ppa, 4);
  put(o, &f.grid.spacing, 8);
  put(o, &f.grid.radius, 8);
  for (int a = 0; a < f.grid.n; ++a) put(o, &f.grid.center[a], 8);
  put(o, f.samples.data(), f.samples.size() * 8);
  if (!o) throw Error(ErrorCode::io, "cigf: write failed for " + path);
}

GridField read_cigf(const std::string& path) {
  std::ifstream i(path, std::ios::binary);
  if (!i) throw Error(ErrorCode::io, "cigf: cannot open " + path);
  char magic[4];
  get(i, magic, 4);
  if (std::memcmp(magic, "CIGF", 4) != 0) throw Error(ErrorCode::io, "cigf: bad magic");
  uint32_t version;
  get(i, &version, 4);
  if (version != 1) throw Error(ErrorCode::io, "cigf: unsupported version");
  uint8_t kind, n;
  get(i, &kind, 1);
  get(i, &n, 1);
  uint16_t comps;
  get(i, &comps, 2);
  uint32_t ppa;
  get(i, &ppa, 4);
  GridField f;
  f.grid.n = n;
  f.grid.points_per_axis = int(ppa);
  get(i, &f.grid.spacing, 8);
  get(i, &f.grid.radius, 8);
  for (int a = 0; a < n; ++a) get(i, &f.grid.center[a], 8);
  f.kind = FieldKind(kind);
  f.components = comps;
  f.grid.validate();
  f.samples.resize(size_t(f.grid.num_points()) * comps);
  get(i, f.samples.data(), f.samples.size() * 8);
  return f;
}

}  // namespace isolab
