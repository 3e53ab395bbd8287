#include "isolab/frames.hpp"

#include <cmath>

#include <Eigen/Dense>
#include <Eigen/SVD>

namespace isolab {

Eigen::VectorXd sym_to_vec(const Eigen::MatrixXd& s) {
  const int n = int(s.rows());
  Eigen::VectorXd v(sym_components(n));
  const double r2 = std::sqrt(2.0);
  int k = 0;
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) v[k++] = (i == j) ? s(i, j) : r2 * 0.5 * (s(i, j) + s(j, i));
  return v;
}

Eigen::MatrixXd vec_to_sym(int n, const Eigen::VectorXd& v) {
  Eigen::MatrixXd s(n, n);
  const double ir2 = 1.0 / std::sqrt(2.0);
  int k = 0;
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) {
      s(i, j) = s(j, i) = (i == j) ? v[k] : ir2 * v[k];
      ++k;
    }
  return s;
}

DirectionSet make_directions(int n) {
  DirectionSet d;
  d.n = n;
  if (n == 2) {
    for (int k = 0; k < 3; ++k) {
      double th = k * M_PI / 3.0;
      Eigen::VectorXd v(2);
      v << std::cos(th), std::sin(th);
      d.dirs.push_back(v);
    }
  } else if (n == 3) {
    const double phi = 0.5 * (1.0 + std::sqrt(5.0));
    const double nrm = std::sqrt(1.0 + phi * phi);
    const double a = 1.0 / nrm, b = phi / nrm;
    const double raw[6][3] = {{0, a, b}, {0, a, -b}, {a, b, 0}, {a, -b, 0}, {b, 0, a}, {-b, 0, a}};
    for (auto& r : raw) {
      Eigen::VectorXd v(3);
      v << r[0], r[1], r[2];
      d.dirs.push_back(v);
    }
  } else {
    throw Error(ErrorCode::config, "make_directions: unsupported dimension");
  }

  const int nd = d.ndir();
  Eigen::MatrixXd B(sym_components(n), nd);
  for (int k = 0; k < nd; ++k)
    B.col(k) = sym_to_vec(Eigen::MatrixXd(d.dirs[k] * d.dirs[k].transpose()));
  Eigen::MatrixXd gram = B.transpose() * B;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(gram);
  double smin = svd.singularValues()(svd.singularValues().size() - 1);
  if (smin < 1e-12) throw Error(ErrorCode::config, "make_directions: singular direction Gram matrix");
  d.gram_condition = svd.singularValues()(0) / smin;

  d.id_coeffs_sq = B.fullPivLu().solve(sym_to_vec(Eigen::MatrixXd::Identity(n, n)));
  for (int k = 0; k < nd; ++k)
    if (d.id_coeffs_sq[k] < 0.1)
      throw Error(ErrorCode::config,
                  "make_directions: identity not strictly inside the positive cone");
  return d;
}

namespace {

// Modified Gram-Schmidt with one reorthogonalization pass: project `v` off
// `fixed`, then orthonormalize among themselves.
bool orthonormalize(std::vector<Eigen::VectorXd>& v, const std::vector<Eigen::VectorXd>& fixed,
                    double collapse_tol) {
  for (auto& u : v) {
    for (int pass = 0; pass < 2; ++pass)
      for (const auto& t : fixed) u -= (u.dot(t)) * t;
  }
  for (size_t i = 0; i < v.size(); ++i) {
    for (int pass = 0; pass < 2; ++pass)
      for (size_t j = 0; j < i; ++j) v[i] -= (v[i].dot(v[j])) * v[j];
    double nrm = v[i].norm();
    if (nrm < collapse_tol) return false;
    v[i] /= nrm;
  }
  return true;
}

// Values are computed wherever the FD stencil fits the bounding box; hard
// failures are raised only inside the valid ball.
bool stencil_fits(const GridSpec& g, const std::array<int, 3>& idx) {
  for (int a = 0; a < g.n; ++a)
    if (idx[a] < 2 || idx[a] > g.points_per_axis - 3) return false;
  return true;
}

}  // namespace

GridField normal_frame(const GridField& f, int d, const GridField* ref) {
  const int n = f.grid.n;
  const int m = f.components;
  if (m - n < d)
    throw Error(ErrorCode::config, "normal_frame: not enough codimension for requested normals");

  std::vector<GridField> df;
  for (int a = 0; a < n; ++a) df.push_back(partial(f, a));

  GridField out = make_map(df[0].grid, d * m);
  out.grid.radius = df[0].grid.radius;

  const long long total = f.grid.num_points();
  std::vector<Eigen::VectorXd> seed(d, Eigen::VectorXd(m));
  Eigen::MatrixXd T(m, n);

  for (long long p = 0; p < total; ++p) {
    auto idx = unflatten(out.grid, p);
    if (!stencil_fits(f.grid, idx)) continue;
    const bool strict = is_valid(out.grid, idx);

    for (int a = 0; a < n; ++a)
      for (int c = 0; c < m; ++c) T(c, a) = df[a].at(p, c);

    Eigen::JacobiSVD<Eigen::MatrixXd> svd(T);
    if (svd.singularValues()(n - 1) < 1e-6) {
      if (strict)
        throw Error(ErrorCode::degenerate_immersion,
                    "normal_frame: differential rank-deficient at a grid point");
      continue;
    }

    std::vector<Eigen::VectorXd> tfix;
    for (int a = 0; a < n; ++a) tfix.push_back(T.col(a));
    if (!orthonormalize(tfix, {}, 1e-9)) {
      if (strict) throw Error(ErrorCode::degenerate_immersion, "normal_frame: tangent collapse");
      continue;
    }

    for (int k = 0; k < d; ++k) {
      if (ref) {
        for (int c = 0; c < m; ++c) seed[k][c] = ref->at(p, k * m + c);
        if (seed[k].norm() < 0.5) {  // unseeded point in the reference frame
          seed[k].setZero();
          seed[k][n + k] = 1.0;
        }
      } else {
        seed[k].setZero();
        seed[k][n + k] = 1.0;  // fixed ambient reference basis
      }
    }
    if (!orthonormalize(seed, tfix, 1e-6)) {
      if (strict)
        throw Error(ErrorCode::frame_seed, "normal_frame: reference basis nearly tangent");
      continue;
    }

    for (int k = 0; k < d; ++k)
      for (int c = 0; c < m; ++c) out.at(p, k * m + c) = seed[k][c];
  }
  return out;
}

FrameField spiral_frames(const GridField& f, const DirectionSet& dirs, const FrameField* ref) {
  const int nd = dirs.ndir();
  const int m = f.components;

  GridField refflat;
  const GridField* refp = nullptr;
  if (ref) {
    refflat = make_map(ref->nu1.grid, 2 * nd * m);
    const long long total = refflat.grid.num_points();
    for (long long p = 0; p < total; ++p)
      for (int k = 0; k < nd; ++k)
        for (int c = 0; c < m; ++c) {
          refflat.at(p, (2 * k) * m + c) = ref->nu1.at(p, k * m + c);
          refflat.at(p, (2 * k + 1) * m + c) = ref->nu2.at(p, k * m + c);
        }
    refp = &refflat;
  }

  GridField flat = normal_frame(f, 2 * nd, refp);
  FrameField out;
  out.variant = FrameVariant::Spiral;
  out.ndir = nd;
  out.m = m;
  out.nu1 = make_map(flat.grid, nd * m);
  out.nu2 = make_map(flat.grid, nd * m);
  const long long total = flat.grid.num_points();
  for (long long p = 0; p < total; ++p)
    for (int k = 0; k < nd; ++k)
      for (int c = 0; c < m; ++c) {
        out.nu1.at(p, k * m + c) = flat.at(p, (2 * k) * m + c);
        out.nu2.at(p, k * m + c) = flat.at(p, (2 * k + 1) * m + c);
      }
  return out;
}

FrameField strain_frames(const GridField& f_ell, const MetricField& g_ell,
                         const DirectionSet& dirs, const FrameField* ref) {
  const int n = f_ell.grid.n;
  const int m = f_ell.components;
  const int nd = dirs.ndir();

  FrameField out;
  out.variant = FrameVariant::Strain;
  out.ndir = nd;
  out.m = m;
  out.nu2 = normal_frame(f_ell, nd, ref ? &ref->nu2 : nullptr);

  std::vector<GridField> df;
  for (int a = 0; a < n; ++a) df.push_back(partial(f_ell, a));

  out.nu1 = make_map(df[0].grid, nd * m);
  out.nu1.grid.radius = std::min(df[0].grid.radius, g_ell.grid.radius);

  const long long total = f_ell.grid.num_points();
  Eigen::MatrixXd gm(n, n);
  for (long long p = 0; p < total; ++p) {
    auto idx = unflatten(out.nu1.grid, p);
    if (!stencil_fits(f_ell.grid, idx)) continue;
    gm = g_ell.sym_matrix(p);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gm, Eigen::EigenvaluesOnly);
    if (es.eigenvalues()(0) < 1e-6) {
      if (is_valid(out.nu1.grid, idx))
        throw Error(ErrorCode::ill_conditioned, "strain_frames: mollified metric singular");
      continue;
    }
    Eigen::MatrixXd ginv = gm.inverse();
    for (int k = 0; k < nd; ++k) {
      Eigen::VectorXd v = ginv * dirs.dirs[k];
      for (int c = 0; c < m; ++c) {
        double s = 0.0;
        for (int r = 0; r < n; ++r) s += v[r] * df[r].at(p, c);
        out.nu1.at(p, k * m + c) = s;
      }
    }
  }
  return out;
}

FrameQuality frame_quality(const FrameField& fr, const GridField& f, const DirectionSet& dirs) {
  const int n = f.grid.n;
  const int m = fr.m;
  const int nd = fr.ndir;
  std::vector<GridField> df;
  for (int a = 0; a < n; ++a) df.push_back(partial(f, a));

  FrameQuality q;
  GridSpec probe = fr.nu2.grid;
  probe.radius = std::min({probe.radius, fr.nu1.grid.radius, df[0].grid.radius});
  probe.margin_cells = std::max({fr.nu2.grid.margin_cells, fr.nu1.grid.margin_cells,
                                 df[0].grid.margin_cells});
  for_each_valid(probe, [&](long long p, const std::array<int, 3>&) {
    std::vector<Eigen::VectorXd> normals;
    for (int k = 0; k < nd; ++k) normals.push_back(fr.nu2_at(p, k));
    if (fr.variant == FrameVariant::Spiral)
      for (int k = 0; k < nd; ++k) normals.push_back(fr.nu1_at(p, k));

    for (size_t i = 0; i < normals.size(); ++i) {
      for (int a = 0; a < n; ++a) {
        double dot = 0.0;
        for (int c = 0; c < m; ++c) dot += normals[i][c] * df[a].at(p, c);
        q.max_tangent_dot = std::max(q.max_tangent_dot, std::abs(dot));
      }
      for (size_t j = 0; j <= i; ++j) {
        double dot = normals[i].dot(normals[j]);
        double target = (i == j) ? 1.0 : 0.0;
        q.max_gram_residual = std::max(q.max_gram_residual, std::abs(dot - target));
      }
    }
    if (fr.variant == FrameVariant::Strain) {
      for (int k = 0; k < nd; ++k) {
        Eigen::VectorXd nu1 = fr.nu1_at(p, k);
        for (int i = 0; i < n; ++i) {
          double dot = 0.0;
          for (int c = 0; c < m; ++c) dot += nu1[c] * df[i].at(p, c);
          q.max_identity_residual =
              std::max(q.max_identity_residual, std::abs(dot - dirs.dirs[k][i]));
        }
        for (int kk = 0; kk < nd; ++kk) {
          double dot = nu1.dot(fr.nu2_at(p, kk));
          q.max_gram_residual = std::max(q.max_gram_residual, std::abs(dot));
        }
      }
    }
  });
  return q;
}

}  // namespace isolab
