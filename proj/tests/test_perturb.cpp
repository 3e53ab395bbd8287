#include <doctest.h>

#include <cmath>

#include <Eigen/Dense>

#include "isolab/holder.hpp"
#include "isolab/perturb.hpp"

using namespace isolab;

namespace {

GridField flat_map(const GridSpec& g, int m) {
  GridField f = make_map(g, m);
  const long long total = g.num_points();
  for (long long p = 0; p < total; ++p) {
    auto idx = unflatten(g, p);
    for (int a = 0; a < g.n; ++a) f.at(p, a) = g.coord(a, idx[a]);
  }
  return f;
}

GridField bent_map(const GridSpec& g, int m, double eps) {
  GridField f = flat_map(g, m);
  const long long total = g.num_points();
  for (long long p = 0; p < total; ++p) {
    auto idx = unflatten(g, p);
    double x[3];
    point_of(g, idx, x);
    f.at(p, g.n) = eps * std::sin(x[0]) * std::sin(x[1]);
    f.at(p, g.n + 1) += 0.5 * eps * std::sin(x[0] + x[1]);
  }
  return f;
}

CoefficientField synthetic_A(const GridSpec& g, int nd, bool constant, double base = 0.8) {
  CoefficientField A;
  A.A = make_map(g, nd);
  const long long total = g.num_points();
  for (long long p = 0; p < total; ++p) {
    auto idx = unflatten(g, p);
    double x[3];
    point_of(g, idx, x);
    for (int k = 0; k < nd; ++k)
      A.A.at(p, k) = constant ? base : base + 0.06 * std::sin(2.0 * x[0] + x[1] + k);
  }
  return A;
}

}  // namespace

TEST_SUITE("perturb") {

TEST_CASE("metric_error_h: forced algebra and positivity abort") {
  GridSpec g = make_grid(2, 33, 1.0);
  const double d1 = 0.01, d2 = 0.008;
  MetricField gl = constant_sym(g, Eigen::Matrix2d::Identity());
  SUBCASE("g - g_ell = (d1 + d2) Id gives h = Id") {
    MetricField gg = constant_sym(g, (1.0 + d1 + d2) * Eigen::Matrix2d::Identity());
    MetricErrorReport rep;
    MetricField h = metric_error_h(gg, gl, d1, d2, 0.1, 0.05, &rep);
    for_each_valid(h.grid, [&](long long p, const std::array<int, 3>&) {
      CHECK(h.sym_at(p, 0, 0) == doctest::Approx(1.0).epsilon(1e-13));
      CHECK(h.sym_at(p, 1, 1) == doctest::Approx(1.0).epsilon(1e-13));
      CHECK(std::abs(h.sym_at(p, 0, 1)) < 1e-14);
    });
    CHECK(rep.theta_ok);
    CHECK(rep.min_eig == doctest::Approx(1.0));
  }
  SUBCASE("g - g_ell = d2 Id gives h = 0 and the positivity abort fires") {
    MetricField gg = constant_sym(g, (1.0 + d2) * Eigen::Matrix2d::Identity());
    CHECK_THROWS_AS(metric_error_h(gg, gl, d1, d2, 0.1, 0.05, nullptr), Error);
  }
}

TEST_CASE("tau tensors vanish for flat maps with constant frames") {
  GridSpec g = make_grid(2, 41, 1.0);
  DirectionSet dirs = make_directions(2);
  SUBCASE("spiral") {
    GridField f = flat_map(g, 8);
    FrameField fr = spiral_frames(f, dirs);
    StageOps ops(f, fr, dirs, 3.0, 0.01);
    double tk = -1, tkk = -1;
    ops.tau_norms(&tk, &tkk);
    CHECK(tk < 1e-12);
    CHECK(tkk < 1e-12);
  }
  SUBCASE("strain") {
    GridField f = flat_map(g, 5);
    MetricField gl = pullback(f);
    FrameField fr = strain_frames(f, gl, dirs);
    StageOps ops(f, fr, dirs, 3.0, 0.01);
    double tk = -1, tkk = -1;
    ops.tau_norms(&tk, &tkk);
    CHECK(tk < 1e-12);
    CHECK(tkk < 1e-12);
  }
}

TEST_CASE("doubling lambda halves the tau_k scale (1/lambda prefactor)") {
  GridSpec g = make_grid(2, 81, 1.0);
  DirectionSet dirs = make_directions(2);
  GridField f = bent_map(g, 5, 0.2);
  MetricField gl = pullback(f);
  FrameField fr = strain_frames(f, gl, dirs);
  double tk1, tk2, dummy;
  StageOps ops1(f, fr, dirs, 3.0, 0.01);
  ops1.tau_norms(&tk1, &dummy);
  StageOps ops2(f, fr, dirs, 6.0, 0.01);
  ops2.tau_norms(&tk2, &dummy);
  CHECK(tk2 == doctest::Approx(0.5 * tk1).epsilon(0.2));
}

TEST_CASE("build_spiral: zero coefficients give zero perturbation") {
  GridSpec g = make_grid(2, 121, 1.0);
  DirectionSet dirs = make_directions(2);
  GridField f = flat_map(g, 8);
  FrameField fr = spiral_frames(f, dirs);
  StageOps ops(f, fr, dirs, 2.5, 0.01);
  CoefficientField A;
  A.A = make_map(g, 3);
  GridField w = ops.build_perturbation(A);
  CHECK(sup_norm(w) == 0.0);
}

TEST_CASE("build_spiral: single direction, constant A, flat frames") {
  GridSpec g = make_grid(2, 241, 1.0);
  DirectionSet dirs = make_directions(2);
  GridField f = flat_map(g, 8);
  FrameField fr = spiral_frames(f, dirs);
  const double lambda = 2.5, delta = 0.01, A0 = 0.7;
  StageOps ops(f, fr, dirs, lambda, delta);
  CoefficientField A;
  A.A = make_map(g, 3);
  for (size_t i = 0; i < A.A.samples.size(); i += 3) A.A.samples[i] = A0;  // k = 0 only

  GridField w = ops.build_perturbation(A);
  // |w|_0 = delta^1/2 A/lambda (unit frames), up to phase sampling on the grid.
  const double closed = std::sqrt(delta) * A0 / lambda;
  double sup = 0.0;
  for_each_valid(w.grid, [&](long long p, const std::array<int, 3>&) {
    for (int c = 0; c < 8; ++c) sup = std::max(sup, std::abs(w.at(p, c)));
  });
  CHECK(sup == doctest::Approx(closed).epsilon(2e-3));

  // |w|_1/delta^1/2 stays within [A0, sqrt2 A0 (1+tol)] for constant frames.
  double w1 = cr_norm(w, 1);
  CHECK(w1 / std::sqrt(delta) >= 0.95 * A0);
  CHECK(w1 / std::sqrt(delta) <= std::sqrt(2.0) * A0 * 1.05);
}

TEST_CASE("build_strain: channel amplitudes in the flat case") {
  GridSpec g = make_grid(2, 241, 1.0);
  DirectionSet dirs = make_directions(2);
  GridField f = flat_map(g, 5);
  MetricField gl = pullback(f);
  FrameField fr = strain_frames(f, gl, dirs);
  const double lambda = 2.5, delta = 0.01, A0 = 0.7;
  StageOps ops(f, fr, dirs, lambda, delta);
  CoefficientField A;
  A.A = make_map(g, 3);
  for (size_t i = 0; i < A.A.samples.size(); i += 3) A.A.samples[i] = A0;

  GridField w = ops.build_perturbation(A);
  // normal channel delta^1/2 sqrt2 A/lambda on nu2_0, tangential delta A^2/(4 lambda).
  double sup_norm_chan = 0.0, sup_tan_chan = 0.0;
  for_each_valid(w.grid, [&](long long p, const std::array<int, 3>&) {
    double wn = 0.0, wt = 0.0;
    for (int c = 0; c < 5; ++c) {
      wn += w.at(p, c) * fr.nu2.at(p, 0 * 5 + c);
      wt += w.at(p, c) * fr.nu1.at(p, 0 * 5 + c);
    }
    sup_norm_chan = std::max(sup_norm_chan, std::abs(wn));
    sup_tan_chan = std::max(sup_tan_chan, std::abs(wt));
  });
  CHECK(sup_norm_chan == doctest::Approx(std::sqrt(delta) * std::sqrt(2.0) * A0 / lambda)
                             .epsilon(2e-3));
  CHECK(sup_tan_chan == doctest::Approx(delta * A0 * A0 / (4.0 * lambda)).epsilon(2e-3));
}

TEST_CASE("resolution rule aborts under-resolved perturbations") {
  GridSpec g = make_grid(2, 41, 1.0);  // h = 0.05
  DirectionSet dirs = make_directions(2);
  GridField f = flat_map(g, 8);
  FrameField fr = spiral_frames(f, dirs);
  StageOps ops(f, fr, dirs, 30.0, 0.01);  // 1/(20*30) << h
  CoefficientField A = synthetic_A(g, 3, true);
  CHECK_THROWS_AS(ops.build_perturbation(A), Error);
}

TEST_CASE("spiral ledger: cancellations, quadratic identity, master identity") {
  GridSpec g = make_grid(2, 241, 1.0);
  DirectionSet dirs = make_directions(2);
  GridField f = bent_map(g, 8, 0.15);
  FrameField fr = spiral_frames(f, dirs);
  const double lambda = 2.5, delta = 0.01;
  StageOps ops(f, fr, dirs, lambda, delta);
  MetricField gl = pullback(f);
  CoefficientField A = synthetic_A(g, 3, false);

  ErrorLedger led = ops.ledger(A, gl, true);
  CHECK(led.ledger_scale > 0.1);  // M is order one

  // R6 = 0 by frame orthogonality; the first-sum term R0 likewise.
  CHECK(led.r6_max <= 1e-10 * led.ledger_scale);
  CHECK(led.r0_max <= 1e-9 * led.ledger_scale);

  // Quadratic expansion identity: exact regrouping, round-off only.
  CHECK(led.quad_identity_residual <= 1e-12 * std::max(1.0, led.ledger_scale));

  // Master reconstruction against the discrete pullback of f + w.
  GridField w = ops.build_perturbation(A);
  GridField fn = axpby(1.0, f, 1.0, w);
  MetricField gn = pullback(fn);
  GridSpec probe = gn.grid;
  probe.radius = led.reconstructed.grid.radius - 2.0 * g.spacing;
  double resid = 0.0, scale = 0.0;
  for_each_valid(probe, [&](long long p, const std::array<int, 3>&) {
    for (int i = 0; i < 2; ++i)
      for (int j = i; j < 2; ++j) {
        resid = std::max(resid,
                         std::abs(gn.sym_at(p, i, j) - led.reconstructed.sym_at(p, i, j)));
        scale = std::max(scale,
                         std::abs(led.reconstructed.sym_at(p, i, j) - gl.sym_at(p, i, j)));
      }
  });
  CHECK(resid <= 1e-6 * scale);

  // A = 0: every ledger term vanishes and g^{q+1} = g_ell.
  CoefficientField zero;
  zero.A = make_map(g, 3);
  ErrorLedger led0 = ops.ledger(zero, gl, false);
  CHECK(led0.ledger_scale <= 1e-14);
  CHECK(sup_norm(axpby(1.0, led0.reconstructed, -1.0, gl)) <= 1e-14);
}

TEST_CASE("strain ledger: R0, the R7 identity, joint cancellation, master identity") {
  GridSpec g = make_grid(2, 241, 1.0);
  DirectionSet dirs = make_directions(2);
  GridField f = bent_map(g, 5, 0.15);
  MetricField gl = pullback(f);
  FrameField fr = strain_frames(f, gl, dirs);
  const double lambda = 2.5, delta = 0.01;
  StageOps ops(f, fr, dirs, lambda, delta);
  CoefficientField A = synthetic_A(g, 3, false);

  ErrorLedger led = ops.ledger(A, gl, true);
  CHECK(led.ledger_scale > 0.1);

  // R0 vanishes by nu1 . nu2 orthogonality (tangent against normal).
  CHECK(led.r0_max <= 1e-10 * led.ledger_scale);

  // Pointwise identity 2 (R7)_ij = (Rt6 - R6)_ji, exact in the discrete world.
  CHECK(led.r7_identity_residual <= 1e-10 * led.ledger_scale);

  // sym(R6 + 2 R7) equals sym(Rt6): quadrilinear-small against the bilinear
  // sizes of R6 and 2 R7 individually.
  const GridField* R6 = led.field("R6");
  const GridField* R7 = led.field("R7");
  const GridField* Rt6 = led.field("Rt6");
  REQUIRE(R6);
  REQUIRE(R7);
  REQUIRE(Rt6);
  double joint = 0.0, jr6 = 0.0, jr7 = 0.0, rt6sym = 0.0;
  GridSpec probe = g;
  probe.radius = led.reconstructed.grid.radius;
  for_each_valid(probe, [&](long long p, const std::array<int, 3>&) {
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) {
        double s = 0.5 * (R6->at(p, i * 2 + j) + 2.0 * R7->at(p, i * 2 + j) +
                          R6->at(p, j * 2 + i) + 2.0 * R7->at(p, j * 2 + i));
        double t = 0.5 * (Rt6->at(p, i * 2 + j) + Rt6->at(p, j * 2 + i));
        joint = std::max(joint, std::abs(s));
        rt6sym = std::max(rt6sym, std::abs(s - t));
        jr6 = std::max(jr6, std::abs(R6->at(p, i * 2 + j)));
        jr7 = std::max(jr7, std::abs(2.0 * R7->at(p, i * 2 + j)));
      }
  });
  CHECK(rt6sym <= 1e-10 * led.ledger_scale);
  CHECK(joint == doctest::Approx(led.cancellation_joint).epsilon(1e-9));
  // The joint term carries the extra delta factor the individual terms lack.
  CHECK(joint <= 4.0 * delta * std::max(jr6, jr7));

  // Master reconstruction.
  GridField w = ops.build_perturbation(A);
  GridField fn = axpby(1.0, f, 1.0, w);
  MetricField gn = pullback(fn);
  GridSpec mp = gn.grid;
  mp.radius = led.reconstructed.grid.radius - 2.0 * g.spacing;
  double resid = 0.0, scale = 0.0;
  for_each_valid(mp, [&](long long p, const std::array<int, 3>&) {
    for (int i = 0; i < 2; ++i)
      for (int j = i; j < 2; ++j) {
        resid = std::max(resid,
                         std::abs(gn.sym_at(p, i, j) - led.reconstructed.sym_at(p, i, j)));
        scale = std::max(scale,
                         std::abs(led.reconstructed.sym_at(p, i, j) - gl.sym_at(p, i, j)));
      }
  });
  CHECK(resid <= 1e-6 * scale);
}

TEST_CASE("kallen forms built from the stage ops telescope to solver tolerance") {
  GridSpec g = make_grid(2, 121, 1.0);
  DirectionSet dirs = make_directions(2);
  GridField f = bent_map(g, 5, 0.08);
  MetricField gl = pullback(f);
  FrameField fr = strain_frames(f, gl, dirs);
  StageOps ops(f, fr, dirs, 2.0, 0.04);

  MetricField h = make_sym(g);
  h.grid.radius = gl.grid.radius;
  const long long total = g.num_points();
  for (long long p = 0; p < total; ++p) {
    auto idx = unflatten(g, p);
    double x[3];
    point_of(g, idx, x);
    h.sym_at(p, 0, 0) = 1.0 + 0.05 * std::sin(x[0]);
    h.sym_at(p, 1, 1) = 1.0 - 0.04 * std::cos(x[1]);
    h.sym_at(p, 0, 1) = 0.03 * std::sin(x[0] + x[1]);
  }

  NewtonOptions opt;
  opt.sigma1 = 5.0;  // the telescoping check, not the guard, is under test
  KallenForms forms = ops.kallen_forms(h, opt);
  CoefficientField a1 = forms.solve(h, nullptr);
  MetricField R1 = forms.R_bilinear(a1, a1);
  MetricField target = axpby(1.0, h, -1.0, R1);
  CoefficientField a2 = forms.solve(target, &a1);
  MetricField E2 = kallen_residual(h, a2, forms);
  MetricField tele = axpby(1.0, R1, -1.0, forms.R_bilinear(a2, a2));
  GridField diff = axpby(1.0, E2, -1.0, tele);
  CHECK(sup_norm(diff) <= 1e-9);

  // Order-of-summation oracle: re-evaluate b with reversed direction loops
  // through materialized point problems.
  ProblemSource src = ops.tau_source(h);
  double worst = 0.0;
  GridSpec probe = g;
  probe.radius = ops.ledger_radius(a2);
  MetricField b2 = forms.b_eval(a2);
  MetricField R2 = forms.R_bilinear(a2, a2);
  for_each_valid(probe, [&](long long p, const std::array<int, 3>&) {
    PointProblem prob;
    src(p, prob);
    Eigen::VectorXd A(3);
    for (int k = 0; k < 3; ++k) A[k] = a2.A.at(p, k);
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(2, 2);
    for (int k = 2; k >= 0; --k) {
      acc += A[k] * A[k] * dirs.dirs[k] * dirs.dirs[k].transpose();
      acc += A[k] * prob.tau_k[k];
      for (int l = 2; l >= 0; --l) acc += A[k] * A[l] * prob.tau_kk[k][l];
    }
    Eigen::MatrixXd Eref = h.sym_matrix(p) - acc - R2.sym_matrix(p);
    Eigen::MatrixXd Egot = h.sym_matrix(p) - b2.sym_matrix(p) - R2.sym_matrix(p);
    worst = std::max(worst, (Eref - Egot).cwiseAbs().maxCoeff());
  });
  CHECK(worst <= 1e-13);
}

}  // TEST_SUITE
