#include <doctest.h>

#include <cmath>

#include <Eigen/Dense>

#include "isolab/decomp.hpp"
#include "isolab/rng.hpp"

using namespace isolab;

namespace {

// Brute-force oracle: exhaustive grid search over the coefficient box with
// step 1e-2 followed by a fine polish, independent of the Newton path.
Eigen::VectorXd brute_force_decompose(const PointProblem& p, const DirectionSet& dirs,
                                      double lo, double hi) {
  const int nd = dirs.ndir();
  REQUIRE(nd <= 3);
  Eigen::VectorXd best(nd), cur(nd);
  double best_res = 1e300;
  const double step = 1e-2;
  auto eval = [&](const Eigen::VectorXd& A) {
    return (decomposition_value(p, dirs, A) - p.tau).norm();
  };
  for (double a0 = lo; a0 <= hi; a0 += step)
    for (double a1 = lo; a1 <= hi; a1 += step)
      for (double a2 = lo; a2 <= hi; a2 += step) {
        cur << a0, a1, a2;
        double r = eval(cur);
        if (r < best_res) {
          best_res = r;
          best = cur;
        }
      }
  // Polish: cyclic coordinate descent with shrinking steps.
  double h = step;
  for (int round = 0; round < 60; ++round) {
    bool moved = false;
    for (int k = 0; k < nd; ++k)
      for (double s : {-h, h}) {
        Eigen::VectorXd cand = best;
        cand[k] += s;
        double r = eval(cand);
        if (r < best_res) {
          best_res = r;
          best = cand;
          moved = true;
        }
      }
    if (!moved) h *= 0.5;
    if (h < 1e-12) break;
  }
  return best;
}

PointProblem make_problem(const DirectionSet& dirs, Rng& rng, double scale_k, double scale_kk) {
  const int n = dirs.n;
  const int nd = dirs.ndir();
  PointProblem p;
  p.tau = Eigen::MatrixXd::Identity(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) {
      double v = 0.03 * rng.uniform(-1.0, 1.0);
      p.tau(i, j) += v;
      p.tau(j, i) = p.tau(i, j);
    }
  p.tau_k.assign(nd, Eigen::MatrixXd::Zero(n, n));
  p.tau_kk.assign(nd, std::vector<Eigen::MatrixXd>(nd, Eigen::MatrixXd::Zero(n, n)));
  for (int k = 0; k < nd; ++k)
    for (int i = 0; i < n; ++i)
      for (int j = i; j < n; ++j) {
        double v = scale_k * rng.uniform(-1.0, 1.0);
        p.tau_k[k](i, j) = p.tau_k[k](j, i) = v;
      }
  for (int k = 0; k < nd; ++k)
    for (int l = 0; l < nd; ++l)
      for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j) {
          double v = scale_kk * rng.uniform(-1.0, 1.0);
          p.tau_kk[k][l](i, j) = p.tau_kk[k][l](j, i) = v;
        }
  return p;
}

}  // namespace

TEST_SUITE("decomp") {

TEST_CASE("baseline: tau = Id gives A_k = sqrt(2/3)") {
  DirectionSet dirs = make_directions(2);
  Eigen::VectorXd A = baseline_solve(Eigen::MatrixXd::Identity(2, 2), dirs);
  for (int k = 0; k < 3; ++k) CHECK(A[k] == doctest::Approx(std::sqrt(2.0 / 3.0)).epsilon(1e-12));
}

TEST_CASE("baseline homogeneity: tau = 1.21 Id gives 1.1 sqrt(2/3)") {
  DirectionSet dirs = make_directions(2);
  Eigen::VectorXd A = baseline_solve(1.21 * Eigen::MatrixXd::Identity(2, 2), dirs);
  for (int k = 0; k < 3; ++k)
    CHECK(A[k] == doctest::Approx(1.1 * std::sqrt(2.0 / 3.0)).epsilon(1e-12));
}

TEST_CASE("cone boundary: near rank-one tau is rejected") {
  DirectionSet dirs = make_directions(2);
  Eigen::MatrixXd tau = dirs.dirs[0] * dirs.dirs[0].transpose() +
                        0.003 * Eigen::MatrixXd::Identity(2, 2);
  CHECK_THROWS_AS(baseline_solve(tau, dirs), Error);
}

TEST_CASE("newton with zero perturbing tensors converges immediately to baseline") {
  DirectionSet dirs = make_directions(2);
  PointProblem p;
  p.tau = Eigen::MatrixXd::Identity(2, 2);
  NewtonOptions opt;
  Eigen::VectorXd seed = baseline_solve(p.tau, dirs);
  int iters = 99;
  Eigen::VectorXd A = newton_decompose(p, dirs, seed, opt, &iters);
  CHECK(iters == 0);  // the seed is already the root
  CHECK((A - seed).norm() < 1e-14);
}

TEST_CASE("newton matches the brute-force oracle on a single perturbed problem") {
  DirectionSet dirs = make_directions(2);
  PointProblem p;
  p.tau = Eigen::MatrixXd::Identity(2, 2);
  p.tau_k.assign(3, Eigen::MatrixXd::Zero(2, 2));
  p.tau_k[0] = 0.01 * dirs.dirs[1] * dirs.dirs[1].transpose();
  NewtonOptions opt;
  Eigen::VectorXd A = newton_decompose(p, dirs, baseline_solve(p.tau, dirs), opt);
  CHECK((decomposition_value(p, dirs, A) - p.tau).norm() <= 1e-12 * p.tau.norm());
  Eigen::VectorXd B = brute_force_decompose(p, dirs, 0.5, 1.1);
  CHECK((A - B).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("newton matches the oracle on 10 random problems inside the guard") {
  DirectionSet dirs = make_directions(2);
  Rng rng(31337);
  NewtonOptions opt;
  for (int trial = 0; trial < 10; ++trial) {
    PointProblem p = make_problem(dirs, rng, 0.01, 0.002);
    REQUIRE(p.guard_value(2) <= opt.sigma1);
    Eigen::VectorXd A = newton_decompose(p, dirs, baseline_solve(p.tau, dirs), opt);
    Eigen::VectorXd B = brute_force_decompose(p, dirs, 0.55, 1.05);
    CHECK((A - B).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("homogeneity of the full decomposition") {
  DirectionSet dirs = make_directions(2);
  Rng rng(99);
  NewtonOptions opt;
  PointProblem p = make_problem(dirs, rng, 0.02, 0.004);
  Eigen::VectorXd A = newton_decompose(p, dirs, baseline_solve(p.tau, dirs), opt);
  const double s = 1.3;
  PointProblem ps = p;
  ps.tau *= s * s;
  for (auto& t : ps.tau_k) t *= s;  // tau_kk fixed
  opt.sigma1 = 2.0;                 // scaled tau leaves the tight guard
  Eigen::VectorXd As = newton_decompose(ps, dirs, Eigen::VectorXd(s * A), opt);
  CHECK((As - s * A).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("guard violation and non-convergence error paths") {
  DirectionSet dirs = make_directions(2);
  PointProblem p;
  p.tau = Eigen::MatrixXd::Identity(2, 2);
  p.tau_k.assign(3, 0.2 * Eigen::MatrixXd::Identity(2, 2));
  NewtonOptions opt;  // guard 0.2 < sum of tensors
  CHECK_THROWS_AS(newton_decompose(p, dirs, baseline_solve(p.tau, dirs), opt), Error);
}

TEST_CASE("field solve: constant problem equals the single-point solve") {
  DirectionSet dirs = make_directions(2);
  GridSpec g = make_grid(2, 17, 1.0);
  PointProblem ref;
  ref.tau = Eigen::MatrixXd::Identity(2, 2);
  ref.tau_k.assign(3, Eigen::MatrixXd::Zero(2, 2));
  ref.tau_k[1] = 0.01 * dirs.dirs[0] * dirs.dirs[0].transpose();
  NewtonOptions opt;
  Eigen::VectorXd single = newton_decompose(ref, dirs, baseline_solve(ref.tau, dirs), opt);

  ProblemSource src = [&](long long, PointProblem& p) { p = ref; };
  CoefficientField cf = decompose_field(g, src, dirs, opt);
  for_each_valid(g, [&](long long p, const std::array<int, 3>&) {
    for (int k = 0; k < 3; ++k) CHECK(cf.A.at(p, k) == doctest::Approx(single[k]).epsilon(1e-12));
  });
  CHECK(cf.max_residual <= 1e-10);

  // warm start from the exact solution returns the identical field
  CoefficientField warm = decompose_field(g, src, dirs, opt, &cf);
  CHECK(warm.A.samples == cf.A.samples);
}

TEST_CASE("Lipschitz stability of A in tau (the smooth-dependence check)") {
  DirectionSet dirs = make_directions(2);
  Rng rng(5);
  NewtonOptions opt;
  PointProblem p = make_problem(dirs, rng, 0.02, 0.003);
  Eigen::VectorXd A0 = newton_decompose(p, dirs, baseline_solve(p.tau, dirs), opt);
  double Kprev = -1.0;
  for (double eta : {1e-3, 5e-4, 2.5e-4}) {
    PointProblem q = p;
    q.tau(0, 0) += eta;
    q.tau(1, 1) += eta * 0.5;
    q.tau(0, 1) += eta * 0.25;
    q.tau(1, 0) = q.tau(0, 1);
    Eigen::VectorXd A1 = newton_decompose(q, dirs, A0, opt);
    double K = (A1 - A0).norm() / eta;
    if (Kprev > 0.0) CHECK(K == doctest::Approx(Kprev).epsilon(0.05));  // stable under halving
    Kprev = K;
  }

  // C^1 dependence along a tau segment: second differences stay bounded.
  auto solve_at = [&](double t) {
    PointProblem q = p;
    q.tau += t * 0.01 * Eigen::MatrixXd::Identity(2, 2);
    return newton_decompose(q, dirs, A0, opt);
  };
  double h = 0.1;
  Eigen::VectorXd am = solve_at(-h), a0 = solve_at(0.0), ap = solve_at(h);
  Eigen::VectorXd second = (ap - 2.0 * a0 + am) / (h * h);
  CHECK(second.norm() < 1.0);
}

}  // TEST_SUITE
