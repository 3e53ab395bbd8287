#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace isolab {

enum class ErrorCode {
  config,
  domain,
  resolution,
  degenerate_immersion,
  frame_seed,
  cone_boundary,
  solver_failure,
  ill_conditioned,
  stage_hypothesis,
  ledger_mismatch,
  divergence,
  io,
  insufficient_data,
};

struct Error : std::runtime_error {
  ErrorCode code;
  Error(ErrorCode c, const std::string& what) : std::runtime_error(what), code(c) {}
};

// Uniform grid over the bounding square/cube of the ball |x - center| <= radius.
// `radius` is the current valid radius; it shrinks under mollification (by ell)
// and under finite differencing (by 2 cells per derivative).
struct GridSpec {
  int n = 2;
  int points_per_axis = 0;
  double spacing = 0.0;
  std::array<double, 3> center{0.0, 0.0, 0.0};
  double radius = 0.0;
  // Cells next to the bounding box that carry no trustworthy values. Starts
  // at 2 (one 4th-order stencil) and grows by 2 with every derived operation,
  // mirroring the radius shrink.
  int margin_cells = 2;

  long long num_points() const {
    long long p = 1;
    for (int a = 0; a < n; ++a) p *= points_per_axis;
    return p;
  }
  double half_extent() const { return 0.5 * spacing * (points_per_axis - 1); }
  double coord(int axis, int idx) const {
    return center[axis] + (idx - 0.5 * (points_per_axis - 1)) * spacing;
  }
  void validate() const;
};

// Grid covering the ball of `radius` with (points-1)*spacing = 2*radius.
GridSpec make_grid(int n, int points_per_axis, double radius,
                   std::array<double, 3> center = {0.0, 0.0, 0.0});

enum class FieldKind : uint8_t { Scalar = 0, Map = 1, SymTensor = 2 };

inline int sym_components(int n) { return n * (n + 1) / 2; }

// Index of the (i,j) entry in upper-triangle storage, row-major.
inline int sym_index(int n, int i, int j) {
  if (i > j) std::swap(i, j);
  return i * n - i * (i - 1) / 2 + (j - i);
}

// Samples stored point-major, component-contiguous. Sym tensors keep exactly
// the upper triangle, so reconstruction is symmetric by storage.
struct GridField {
  GridSpec grid;
  FieldKind kind = FieldKind::Scalar;
  int components = 1;
  std::vector<double> samples;

  double& at(long long p, int c) { return samples[p * components + c]; }
  double at(long long p, int c) const { return samples[p * components + c]; }

  double sym_at(long long p, int i, int j) const {
    return samples[p * components + sym_index(grid.n, i, j)];
  }
  double& sym_at(long long p, int i, int j) {
    return samples[p * components + sym_index(grid.n, i, j)];
  }

  Eigen::MatrixXd sym_matrix(long long p) const;
  void set_sym_matrix(long long p, const Eigen::MatrixXd& m);
};

GridField make_scalar(const GridSpec& g);
GridField make_map(const GridSpec& g, int m);
GridField make_sym(const GridSpec& g);
// Full (possibly non-symmetric) matrix field, stored as a map with n*n entries.
GridField make_full(const GridSpec& g);

using MetricField = GridField;  // sym-tensor kind, positive definite when flagged

// Multi-index <-> linear index (ix fastest).
inline long long flatten(const GridSpec& g, const std::array<int, 3>& idx) {
  long long p = 0;
  for (int a = g.n - 1; a >= 0; --a) p = p * g.points_per_axis + idx[a];
  return p;
}
inline std::array<int, 3> unflatten(const GridSpec& g, long long p) {
  std::array<int, 3> idx{0, 0, 0};
  for (int a = 0; a < g.n; ++a) {
    idx[a] = int(p % g.points_per_axis);
    p /= g.points_per_axis;
  }
  return idx;
}

inline void point_of(const GridSpec& g, const std::array<int, 3>& idx, double* x) {
  for (int a = 0; a < g.n; ++a) x[a] = g.coord(a, idx[a]);
}

// A point is valid when it lies in the current ball and at least
// margin_cells from the bounding box, so stencil chains never go one-sided.
bool is_valid(const GridSpec& g, const std::array<int, 3>& idx);

long long count_valid(const GridSpec& g);

// Calls fn(linear_index, idx) for every valid point.
template <typename F>
void for_each_valid(const GridSpec& g, F&& fn) {
  const int N = g.points_per_axis;
  std::array<int, 3> idx{0, 0, 0};
  const double r2 = g.radius * g.radius * (1.0 + 1e-12);
  const double margin = g.half_extent() - g.margin_cells * g.spacing + 1e-12 * g.spacing;
  if (g.n == 1) {
    for (idx[0] = 0; idx[0] < N; ++idx[0]) {
      double x = g.coord(0, idx[0]) - g.center[0];
      if (x * x <= r2 && std::abs(x) <= margin) fn(flatten(g, idx), idx);
    }
    return;
  }
  if (g.n == 2) {
    long long p = 0;
    for (idx[1] = 0; idx[1] < N; ++idx[1]) {
      double y = g.coord(1, idx[1]) - g.center[1];
      bool yin = std::abs(y) <= margin;
      for (idx[0] = 0; idx[0] < N; ++idx[0], ++p) {
        double x = g.coord(0, idx[0]) - g.center[0];
        if (yin && x * x + y * y <= r2 && std::abs(x) <= margin) fn(p, idx);
      }
    }
    return;
  }
  long long p = 0;
  for (idx[2] = 0; idx[2] < N; ++idx[2]) {
    double z = g.coord(2, idx[2]) - g.center[2];
    bool zin = std::abs(z) <= margin;
    for (idx[1] = 0; idx[1] < N; ++idx[1]) {
      double y = g.coord(1, idx[1]) - g.center[1];
      bool yin = zin && std::abs(y) <= margin;
      for (idx[0] = 0; idx[0] < N; ++idx[0], ++p) {
        double x = g.coord(0, idx[0]) - g.center[0];
        if (yin && x * x + y * y + z * z <= r2 && std::abs(x) <= margin) fn(p, idx);
      }
    }
  }
}

// 4th-order central difference along `axis`; output radius shrinks by 2 cells.
GridField partial(const GridField& f, int axis);

// Induced metric g_ij = d_i f . d_j f of a map into R^m, m >= n.
MetricField pullback(const GridField& f);

// Pointwise symmetrization of a full matrix field: (T + T^t)/2.
GridField sym(const GridField& full);

// Minimum over valid points of the smallest eigenvalue, closed-form solve.
double min_eigenvalue(const MetricField& g);

// Pointwise linear combination a*f + b*g (shapes must agree; radius is the min).
GridField axpby(double a, const GridField& f, double b, const GridField& g);

GridField constant_sym(const GridSpec& g, const Eigen::MatrixXd& value);

double sup_norm(const GridField& f);  // max over valid points and components

// CIGF flat binary container.
void write_cigf(const std::string& path, const GridField& f);
GridField read_cigf(const std::string& path);

}  // namespace isolab
