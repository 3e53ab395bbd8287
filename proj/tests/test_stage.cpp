#include <doctest.h>

#include <cmath>

#include <Eigen/Dense>

#include "isolab/holder.hpp"
#include "isolab/stage.hpp"

using namespace isolab;

namespace {

RunConfig small_stage_config(const std::string& variant) {
  RunConfig c;
  c.variant = variant;
  c.n = 2;
  c.stages = 1;
  c.kallen_steps = 4;
  c.a = 8.0;
  c.b = 1.25;
  c.alpha = 0.3;
  c.beta = 0.1;
  c.epsilon = 0.01;
  c.points_per_axis = variant == "strain" ? 421 : 241;
  c.radius = 0.35;
  c.margin = 0.15;
  c.pad_cells = 12;
  c.initial_kind = "inclusion";
  c.P_kind = "diag";
  // desk scale: h > 0 needs |P| < 1 - delta_{q+2}/delta_{q+1} ~ 0.27 here
  c.P_amp = 0.15;
  c.P_freq = 3.0;
  c.sigma1 = 2.0;  // desk scale: |h - Id| is order 1 - delta_{q+2}/delta_{q+1}
  c.theta = 0.1;
  c.theta_hard = false;
  c.pair_budget = 200000;
  return c;
}

}  // namespace

TEST_SUITE("stage") {

TEST_CASE("double exponential ansatz values at the spec point") {
  AnsatzParams z{100.0, 1.05, 0.5, 0.1, 0.01};
  StageParams p = schedule(1, z);
  CHECK(p.delta_q == doctest::Approx(0.01).epsilon(1e-12));             // a^{-2 alpha}
  CHECK(p.lambda_q == doctest::Approx(std::pow(100.0, 1.05)).epsilon(1e-12));
  CHECK(p.lambda_q == doctest::Approx(125.892541179).epsilon(1e-9));
  CHECK(p.beta_star == doctest::Approx(1.0 / 1.9));
  CHECK(p.eps_star == doctest::Approx(0.01 / 1.9));
}

TEST_CASE("infeasible parameters are rejected with the violated inequality named") {
  AnsatzParams z{100.0, 1.05, 0.99, 0.1, 0.01};  // 1.98 >= 1.9
  try {
    schedule(0, z);
    FAIL("expected a configuration error");
  } catch (const Error& e) {
    CHECK(e.code == ErrorCode::config);
    CHECK(std::string(e.what()).find("2*alpha < 2 - beta") != std::string::npos);
  }
}

TEST_CASE("lambda_q ell <= 1 holds for any feasible set by construction") {
  for (double a : {10.0, 50.0, 200.0})
    for (double b : {1.02, 1.1, 1.3})
      for (double alpha : {0.2, 0.5, 0.8}) {
        AnsatzParams z{a, b, alpha, 0.1, 0.01};
        ScheduleChecks c = schedule_check(0, z, 5);
        if (!(c.restriction2 && c.bound2 && c.bound3)) continue;
        StageParams p = schedule(0, z);
        CHECK(p.lambda_q * p.ell <= 1.0 + 1e-9);
        CHECK(p.lambda_q1 * p.ell >= 1.0 - 1e-9);
      }
}

TEST_CASE("bound4 flips true once enough iteration steps are configured") {
  AnsatzParams z{100.0, 1.05, 0.5, 0.1, 0.01};
  ScheduleChecks c5 = schedule_check(0, z, 5);
  ScheduleChecks c80 = schedule_check(0, z, 80);
  CHECK_FALSE(c5.bound4);  // lambda ell ~ 1.1 at desk scale
  CHECK(c80.bound4);
}

TEST_CASE("initial data: inclusion with P = 0 gives defect ratio zero") {
  RunConfig c = small_stage_config("strain");
  c.P_kind = "none";
  c.points_per_axis = 121;
  AnsatzParams z{c.a, c.b, c.alpha, c.beta, c.epsilon};
  StageParams p0 = schedule(0, z);
  InitialData init = initial_data(c, p0);
  // (g - pullback(f0))/delta_1 - Id = P = 0 on the valid set.
  MetricField pb = pullback(init.f0);
  double worst = 0.0;
  for_each_valid(pb.grid, [&](long long p, const std::array<int, 3>&) {
    for (int i = 0; i < 2; ++i)
      for (int j = i; j < 2; ++j) {
        double dev = (init.g.sym_at(p, i, j) - pb.sym_at(p, i, j)) / p0.delta_q1 -
                     (i == j ? 1.0 : 0.0);
        worst = std::max(worst, std::abs(dev));
      }
  });
  CHECK(worst < 1e-12);
  CHECK(init.P_sup == 0.0);
}

TEST_CASE("initial data: scaled inclusion matching delta_1 = 1 - c^2 gives g = Id") {
  RunConfig c = small_stage_config("strain");
  c.points_per_axis = 121;
  c.initial_kind = "scaled";
  c.initial_scale = 0.95;
  c.P_kind = "none";
  // solve a from delta_1 = a^{-2 alpha} = 1 - c^2 = 0.0975
  c.a = std::pow(1.0 - 0.95 * 0.95, -1.0 / (2.0 * c.alpha));
  AnsatzParams z{c.a, c.b, c.alpha, c.beta, c.epsilon};
  StageParams p0 = schedule(0, z);
  CHECK(p0.delta_q1 == doctest::Approx(0.0975).epsilon(1e-12));
  InitialData init = initial_data(c, p0);
  double worst = 0.0;
  for_each_valid(init.g.grid, [&](long long p, const std::array<int, 3>&) {
    for (int i = 0; i < 2; ++i)
      for (int j = i; j < 2; ++j)
        worst = std::max(worst,
                         std::abs(init.g.sym_at(p, i, j) - (i == j ? 1.0 : 0.0)));
  });
  CHECK(worst < 1e-12);
}

TEST_CASE("oversized P violates the q = 0 hypothesis") {
  RunConfig c = small_stage_config("strain");
  c.points_per_axis = 121;
  c.P_amp = 1.5;  // above lambda_0^{-eps}
  AnsatzParams z{c.a, c.b, c.alpha, c.beta, c.epsilon};
  StageParams p0 = schedule(0, z);
  CHECK_THROWS_AS(initial_data(c, p0), Error);
}

TEST_CASE("degenerate run: g = pullback + delta_{q+2} Id trips the h positivity abort") {
  RunConfig c = small_stage_config("strain");
  c.points_per_axis = 201;
  c.radius = 0.2;
  AnsatzParams z{c.a, c.b, c.alpha, c.beta, c.epsilon};
  StageParams p0 = schedule(0, z);
  InitialData init = initial_data(c, p0);
  MetricField pb = pullback(init.f0);
  MetricField g = make_sym(init.f0.grid);
  const long long total = g.grid.num_points();
  for (long long p = 0; p < total; ++p)
    for (int i = 0; i < 2; ++i)
      for (int j = i; j < 2; ++j)
        g.sym_at(p, i, j) = pb.sym_at(p, i, j) + (i == j ? p0.delta_q2 : 0.0);
  StageOptions opt = stage_options(c);
  // resolution is fine; h = 0 must abort with a stage-hypothesis error
  CHECK_THROWS_AS(run_stage(init.f0, g, p0, FrameVariant::Strain, opt), Error);
}

TEST_CASE("one spiral stage end to end at desk scale") {
  RunConfig c = small_stage_config("spiral");
  c.stages = 1;
  RunSummary sum = run(c);
  REQUIRE(sum.reports.size() == 1);
  const StageReport& r = sum.reports[0];
  CHECK(r.min_eig_short > 0.0);                      // still short
  CHECK(r.ledger.r6_max <= 1e-9 * r.ledger.ledger_scale);
  CHECK(r.ledger.master_residual <= 1e-6 * r.ledger.master_scale);
  CHECK(r.defect_ratio < 1.0);                       // defect below delta_{q+2}
  CHECK(r.w.C1 < 10.0);
  CHECK(r.radius_next == doctest::Approx(c.radius - r.params.ell));
  CHECK(r.kallen.records.size() == size_t(c.kallen_steps));
}

TEST_CASE("one strain stage end to end at desk scale") {
  RunConfig c = small_stage_config("strain");
  RunSummary sum = run(c);
  REQUIRE(sum.reports.size() == 1);
  const StageReport& r = sum.reports[0];
  CHECK(r.min_eig_short > 0.0);
  CHECK(r.ledger.r0_max <= 1e-9 * r.ledger.ledger_scale);
  CHECK(r.ledger.r7_identity_residual <= 1e-9 * r.ledger.ledger_scale);
  CHECK(r.ledger.master_residual <= 1e-6 * r.ledger.master_scale);
  CHECK(r.defect_ratio < 1.0);
  CHECK(r.w.C1 < 10.0);
}

}  // TEST_SUITE
