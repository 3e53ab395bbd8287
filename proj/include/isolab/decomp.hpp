#pragma once

#include <functional>

#include "isolab/frames.hpp"
#include "isolab/grid.hpp"

namespace isolab {

struct NewtonOptions {
  double sigma1 = 0.2;        // guard on |tau-Id| + sum|tau_k| + sum|tau_kk'|
  double sigma_floor = 0.05;  // positivity floor on every A_k
  double tol_rel = 1e-12;     // converged when |G| <= tol_rel * max(1, |tau|)
  int max_iter = 50;
  double cond_max = 1e8;
  bool enforce_guard = true;
};

// One decomposition problem at a point: tau = sum A_k^2 n_k x n_k
// + sum A_k tau_k + sum A_k A_k' tau_kk'.
struct PointProblem {
  Eigen::MatrixXd tau;
  std::vector<Eigen::MatrixXd> tau_k;                // empty means all zero
  std::vector<std::vector<Eigen::MatrixXd>> tau_kk;  // empty means all zero

  double guard_value(int n) const;  // |tau - Id|_F + sum of Frobenius norms
};

// Linear special case tau_k = tau_kk' = 0: solve for c_k in the Sym(n) basis
// and take A_k = sqrt(c_k). Throws cone_boundary if any c_k < floor^2.
Eigen::VectorXd baseline_solve(const Eigen::MatrixXd& tau, const DirectionSet& dirs,
                               double sigma_floor = 0.05);

// Damped Newton on G(A) = b(A,A) - tau with step halving at the floor.
Eigen::VectorXd newton_decompose(const PointProblem& p, const DirectionSet& dirs,
                                 const Eigen::VectorXd& seed, const NewtonOptions& opt,
                                 int* iters_out = nullptr);

Eigen::MatrixXd decomposition_value(const PointProblem& p, const DirectionSet& dirs,
                                    const Eigen::VectorXd& A);

struct CoefficientField {
  GridField A;  // ndir components
  double floor = 0.05;
  long long points_solved = 0;
  int max_iterations = 0;
  double max_residual = 0.0;
  double max_guard = 0.0;  // largest guard value seen inside the ball
};

using ProblemSource = std::function<void(long long p, PointProblem& out)>;

// Pointwise solve over the ball of `solve radius` = tau.radius, with values
// extended over an apron of `apron_cells` beyond it (best effort there: guard
// violations and solver failures outside the ball fall back to a clamped
// baseline instead of aborting).
CoefficientField decompose_field(const GridSpec& domain, const ProblemSource& src,
                                 const DirectionSet& dirs, const NewtonOptions& opt,
                                 const CoefficientField* warm = nullptr, int apron_cells = 8);

// Convenience wrapper over materialized tensor fields (tests, small grids).
CoefficientField decompose_field(const MetricField& tau, const std::vector<GridField>& tau_k,
                                 const std::vector<std::vector<GridField>>& tau_kk,
                                 const DirectionSet& dirs, const NewtonOptions& opt,
                                 const CoefficientField* warm = nullptr);

}  // namespace isolab
