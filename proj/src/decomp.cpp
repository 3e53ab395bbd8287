#include "isolab/decomp.hpp"

#include <cmath>
#include <sstream>

#include <Eigen/Dense>
#include <Eigen/SVD>

namespace isolab {

namespace {

// Fixed-capacity types keep the per-point solves off the heap (n <= 3,
// N_dir <= 6, Sym(n) <= 6).
using SMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, 3, 3>;
using SVec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, 6, 1>;
using JMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, 6, 6>;

SVec to_vec(const Eigen::Ref<const Eigen::MatrixXd>& s) {
  const int n = int(s.rows());
  SVec v(sym_components(n));
  const double r2 = std::sqrt(2.0);
  int k = 0;
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) v[k++] = (i == j) ? s(i, j) : r2 * 0.5 * (s(i, j) + s(j, i));
  return v;
}

// Direction data hoisted out of the pointwise loops.
struct DirBasis {
  int n = 0, nd = 0;
  JMat B;                   // columns vec(n_k x n_k)
  std::vector<SMat> nknk;   // rank-one tensors
  Eigen::FullPivLU<JMat> lu;

  explicit DirBasis(const DirectionSet& dirs) {
    n = dirs.n;
    nd = dirs.ndir();
    B.resize(sym_components(n), nd);
    for (int k = 0; k < nd; ++k) {
      SMat r = dirs.dirs[k] * dirs.dirs[k].transpose();
      nknk.push_back(r);
      B.col(k) = to_vec(r);
    }
    lu.compute(B);
  }
};

SMat value_of(const PointProblem& p, const DirBasis& d, const SVec& A) {
  SMat v = SMat::Zero(d.n, d.n);
  for (int k = 0; k < d.nd; ++k) v += A[k] * A[k] * d.nknk[k];
  if (!p.tau_k.empty())
    for (int k = 0; k < d.nd; ++k) v += A[k] * p.tau_k[k];
  if (!p.tau_kk.empty())
    for (int k = 0; k < d.nd; ++k)
      for (int l = 0; l < d.nd; ++l) v += A[k] * A[l] * p.tau_kk[k][l];
  return v;
}

SVec baseline_fast(const SMat& tau, const DirBasis& d, double floor, bool* ok) {
  SVec c = d.lu.solve(to_vec(tau));
  *ok = true;
  for (int k = 0; k < d.nd; ++k)
    if (c[k] < floor * floor) *ok = false;
  return c;
}

SVec newton_fast(const PointProblem& p, const DirBasis& d, const SVec& seed,
                 const NewtonOptions& opt, int* iters_out) {
  const int n = d.n;
  const int nd = d.nd;
  if (opt.enforce_guard && p.guard_value(n) > opt.sigma1)
    throw Error(ErrorCode::cone_boundary, "newton_decompose: problem outside the sigma1 guard");

  const double scale = std::max(1.0, p.tau.norm());
  const double tol = opt.tol_rel * scale;

  SVec A = seed;
  for (int k = 0; k < nd; ++k) A[k] = std::max(A[k], opt.sigma_floor);

  SVec G = to_vec(value_of(p, d, A) - p.tau);
  JMat J(sym_components(n), nd);
  int it = 0;
  for (; it < opt.max_iter && G.norm() > tol; ++it) {
    for (int m = 0; m < nd; ++m) {
      SMat col = 2.0 * A[m] * d.nknk[m];
      if (!p.tau_k.empty()) col += p.tau_k[m];
      if (!p.tau_kk.empty())
        for (int k = 0; k < nd; ++k) col += A[k] * (p.tau_kk[m][k] + p.tau_kk[k][m]);
      J.col(m) = to_vec(col);
    }
    Eigen::FullPivLU<JMat> lu(J);
    const double pmax = std::abs(lu.matrixLU()(0, 0));
    const int last = int(J.cols()) - 1;
    const double pmin = std::abs(lu.matrixLU()(last, last));
    // Pivot-ratio condition estimate, exact enough for the 1e8 guard.
    if (pmin <= 0.0 || pmax / pmin > opt.cond_max)
      throw Error(ErrorCode::ill_conditioned, "newton_decompose: Jacobian condition too large");

    SVec step = lu.solve(-G);
    double t = 1.0;
    bool accepted = false;
    for (int half = 0; half < 40; ++half) {
      SVec cand = A + t * step;
      bool above_floor = true;
      for (int k = 0; k < nd; ++k)
        if (cand[k] < opt.sigma_floor) { above_floor = false; break; }
      if (above_floor) {
        SVec Gc = to_vec(value_of(p, d, cand) - p.tau);
        if (Gc.norm() < G.norm()) {
          A = cand;
          G = Gc;
          accepted = true;
          break;
        }
      }
      t *= 0.5;
    }
    if (!accepted) break;
  }
  if (G.norm() > tol)
    throw Error(ErrorCode::solver_failure, "newton_decompose: no convergence in iteration budget");
  if (iters_out) *iters_out = it;
  return A;
}

}  // namespace

double PointProblem::guard_value(int n) const {
  double g = (tau - Eigen::MatrixXd::Identity(n, n)).norm();
  for (const auto& t : tau_k) g += t.norm();
  for (const auto& row : tau_kk)
    for (const auto& t : row) g += t.norm();
  return g;
}

Eigen::VectorXd baseline_solve(const Eigen::MatrixXd& tau, const DirectionSet& dirs,
                               double sigma_floor) {
  DirBasis d(dirs);
  bool ok = false;
  SVec c = baseline_fast(SMat(tau), d, sigma_floor, &ok);
  if (!ok)
    throw Error(ErrorCode::cone_boundary,
                "baseline_solve: tau not decomposable with coefficients above the floor");
  return Eigen::VectorXd(c.cwiseSqrt());
}

Eigen::MatrixXd decomposition_value(const PointProblem& p, const DirectionSet& dirs,
                                    const Eigen::VectorXd& A) {
  DirBasis d(dirs);
  return Eigen::MatrixXd(value_of(p, d, SVec(A)));
}

Eigen::VectorXd newton_decompose(const PointProblem& p, const DirectionSet& dirs,
                                 const Eigen::VectorXd& seed, const NewtonOptions& opt,
                                 int* iters_out) {
  DirBasis d(dirs);
  return Eigen::VectorXd(newton_fast(p, d, SVec(seed), opt, iters_out));
}

CoefficientField decompose_field(const GridSpec& domain, const ProblemSource& src,
                                 const DirectionSet& dirs, const NewtonOptions& opt,
                                 const CoefficientField* warm, int apron_cells) {
  const int nd = dirs.ndir();
  DirBasis basis(dirs);
  CoefficientField out;
  out.A = make_map(domain, nd);
  out.A.kind = FieldKind::Map;
  out.floor = opt.sigma_floor;

  const double solve_radius = domain.radius + apron_cells * domain.spacing;
  const double solve_r2 = solve_radius * solve_radius;
  const double strict_r2 = domain.radius * domain.radius * (1.0 + 1e-12);
  const double margin =
      domain.half_extent() - domain.margin_cells * domain.spacing + 1e-12 * domain.spacing;

  const long long total = domain.num_points();
  PointProblem prob;
  std::ostringstream firstfail;
  int failures = 0;
  SVec seed(nd);

  for (long long p = 0; p < total; ++p) {
    auto idx = unflatten(domain, p);
    double r2 = 0.0;
    bool box_ok = true, in_margin = true;
    for (int a = 0; a < domain.n; ++a) {
      double x = domain.coord(a, idx[a]) - domain.center[a];
      r2 += x * x;
      if (idx[a] < 2 || idx[a] > domain.points_per_axis - 3) box_ok = false;
      if (std::abs(x) > margin) in_margin = false;
    }
    if (r2 > solve_r2 || !box_ok) continue;
    const bool strict = r2 <= strict_r2 && in_margin;
    src(p, prob);

    bool have_seed = false;
    if (warm) {
      for (int k = 0; k < nd; ++k) seed[k] = warm->A.at(p, k);
      have_seed = seed.norm() > 1e-14;
    }

    try {
      if (!have_seed) {
        bool ok = false;
        SVec c = baseline_fast(SMat(prob.tau), basis, opt.sigma_floor, &ok);
        if (!ok)
          throw Error(ErrorCode::cone_boundary, "baseline seed outside the positive cone");
        seed = c.cwiseSqrt();
      }
      int iters = 0;
      if (strict) out.max_guard = std::max(out.max_guard, prob.guard_value(domain.n));
      SVec A = newton_fast(prob, basis, seed, opt, &iters);
      for (int k = 0; k < nd; ++k) out.A.at(p, k) = A[k];
      if (strict) {
        ++out.points_solved;
        out.max_iterations = std::max(out.max_iterations, iters);
        out.max_residual =
            std::max(out.max_residual, (value_of(prob, basis, A) - SMat(prob.tau)).norm());
      }
    } catch (const Error& e) {
      if (strict) {
        if (failures++ < 5) {
          firstfail << " [";
          for (int a = 0; a < domain.n; ++a)
            firstfail << (a ? "," : "") << domain.coord(a, idx[a]);
          firstfail << "] " << e.what();
        }
      } else {
        // Apron fallback: clamped cone projection, best effort.
        SVec c = basis.lu.solve(to_vec(prob.tau));
        for (int k = 0; k < nd; ++k)
          out.A.at(p, k) = std::sqrt(std::max(c[k], opt.sigma_floor * opt.sigma_floor));
      }
    }
  }
  if (failures > 0) {
    std::ostringstream msg;
    msg << "decompose_field: " << failures << " point(s) failed;" << firstfail.str();
    throw Error(ErrorCode::solver_failure, msg.str());
  }
  return out;
}

CoefficientField decompose_field(const MetricField& tau, const std::vector<GridField>& tau_k,
                                 const std::vector<std::vector<GridField>>& tau_kk,
                                 const DirectionSet& dirs, const NewtonOptions& opt,
                                 const CoefficientField* warm) {
  const int nd = dirs.ndir();
  ProblemSource src = [&](long long p, PointProblem& prob) {
    prob.tau = tau.sym_matrix(p);
    prob.tau_k.resize(tau_k.empty() ? 0 : nd);
    for (size_t k = 0; k < tau_k.size(); ++k) prob.tau_k[k] = tau_k[k].sym_matrix(p);
    if (tau_kk.empty()) {
      prob.tau_kk.clear();
    } else {
      prob.tau_kk.assign(nd, std::vector<Eigen::MatrixXd>(nd));
      for (int k = 0; k < nd; ++k)
        for (int l = 0; l < nd; ++l) prob.tau_kk[k][l] = tau_kk[k][l].sym_matrix(p);
    }
  };
  return decompose_field(tau.grid, src, dirs, opt, warm);
}

}  // namespace isolab
