#include "isolab/stage.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "isolab/holder.hpp"
#include "isolab/mollify.hpp"
#include "isolab/rng.hpp"

namespace isolab {

namespace {

double pow_b(double b, int q) { return std::pow(b, q); }

double ell_of(int q, const AnsatzParams& z) {
  const double beta_star = 1.0 / (2.0 - z.beta);
  const double eps_star = z.epsilon * beta_star;
  const double lambda_q = std::pow(z.a, pow_b(z.b, q));
  const double dq = std::pow(z.a, -2.0 * z.alpha * pow_b(z.b, q - 1));
  const double dq1 = std::pow(z.a, -2.0 * z.alpha * pow_b(z.b, q));
  return std::pow(lambda_q, -1.0 - eps_star) * std::pow(dq1 / dq, beta_star);
}

}  // namespace

ScheduleChecks schedule_check(int q, const AnsatzParams& z, int steps) {
  ScheduleChecks c;
  const double tol = 1e-9;
  c.restriction2 = (2.0 * z.alpha < 2.0 - z.beta) && z.b > 1.0 && z.alpha > 0.0 &&
                   z.alpha < 1.0 && z.epsilon > 0.0 && z.epsilon < 0.25;
  if (!c.restriction2) return c;

  const double lambda_q = std::pow(z.a, pow_b(z.b, q));
  const double lambda_q1 = std::pow(z.a, pow_b(z.b, q + 1));
  const double dq = std::pow(z.a, -2.0 * z.alpha * pow_b(z.b, q - 1));
  const double dq1 = std::pow(z.a, -2.0 * z.alpha * pow_b(z.b, q));
  const double dq2 = std::pow(z.a, -2.0 * z.alpha * pow_b(z.b, q + 1));
  const double ell = ell_of(q, z);

  c.bound2 = lambda_q * ell <= 1.0 + tol && lambda_q1 * ell >= 1.0 - tol;
  c.bound3 = std::sqrt(dq) * lambda_q * ell <= std::sqrt(dq1) * lambda_q1 * ell + tol &&
             std::sqrt(dq1) * lambda_q1 * ell <= 1.0 + tol;
  c.bound4 = std::pow(lambda_q1 * ell, -double(steps)) <=
             dq2 * std::pow(lambda_q1, -z.epsilon) + tol;
  return c;
}

StageParams schedule(int q, const AnsatzParams& z, double theta, int kallen_steps) {
  StageParams p;
  p.q = q;
  p.z = z;
  p.theta = theta;
  p.kallen_steps = kallen_steps;
  p.beta_star = 1.0 / (2.0 - z.beta);
  p.eps_star = z.epsilon * p.beta_star;
  p.delta_q = std::pow(z.a, -2.0 * z.alpha * pow_b(z.b, q - 1));
  p.delta_q1 = std::pow(z.a, -2.0 * z.alpha * pow_b(z.b, q));
  p.delta_q2 = std::pow(z.a, -2.0 * z.alpha * pow_b(z.b, q + 1));
  p.lambda_q = std::pow(z.a, pow_b(z.b, q));
  p.lambda_q1 = std::pow(z.a, pow_b(z.b, q + 1));
  p.ell = ell_of(q, z);
  p.lambda_ell = p.lambda_q1 * p.ell;
  p.checks = schedule_check(q, z, kallen_steps);

  if (!p.checks.all_hard()) {
    std::ostringstream msg;
    msg << "schedule: infeasible parameter set at q=" << q << ";";
    if (!(z.b > 1.0)) msg << " b > 1 violated;";
    if (!(z.alpha > 0.0 && z.alpha < 1.0)) msg << " alpha in (0,1) violated;";
    if (!(z.epsilon > 0.0 && z.epsilon < 0.25)) msg << " epsilon in (0,1/4) violated;";
    if (!(2.0 * z.alpha < 2.0 - z.beta)) msg << " 2*alpha < 2 - beta violated;";
    if (p.checks.restriction2 && !p.checks.bound2)
      msg << " bound2 (lambda_q ell <= 1 <= lambda_{q+1} ell) violated;";
    if (p.checks.restriction2 && !p.checks.bound3)
      msg << " bound3 (delta^1/2 lambda ell monotone and <= 1) violated;";
    throw Error(ErrorCode::config, msg.str());
  }
  return p;
}

namespace {

int codim_of(const std::string& variant, int n) {
  if (variant == "spiral") return n * (n + 1);
  if (variant == "strain") return n * (n + 1) / 2;
  throw Error(ErrorCode::config, "unknown variant: " + variant);
}

// Copy the outermost two cells from the nearest interior point; those points
// never enter norms but downstream pointwise algebra reads them.
void fill_rim(GridField& f) {
  const GridSpec& g = f.grid;
  const int N = g.points_per_axis;
  const long long total = g.num_points();
  for (long long p = 0; p < total; ++p) {
    auto idx = unflatten(g, p);
    std::array<int, 3> cl = idx;
    bool rim = false;
    for (int a = 0; a < g.n; ++a) {
      if (cl[a] < 2) { cl[a] = 2; rim = true; }
      if (cl[a] > N - 3) { cl[a] = N - 3; rim = true; }
    }
    if (!rim) continue;
    long long src = flatten(g, cl);
    for (int c = 0; c < f.components; ++c) f.at(p, c) = f.at(src, c);
  }
}

}  // namespace

InitialData initial_data(const RunConfig& cfg, const StageParams& p0) {
  const int n = cfg.n;
  if (n != 2 && n != 3) throw Error(ErrorCode::config, "initial_data: n must be 2 or 3");
  const int m = n + codim_of(cfg.variant, n);

  GridSpec grid;
  grid.n = n;
  grid.points_per_axis = cfg.points_per_axis;
  grid.radius = cfg.radius;
  grid.spacing = 2.0 * cfg.radius / (cfg.points_per_axis - 1 - 2 * cfg.pad_cells);
  grid.validate();

  InitialData out;
  out.f0 = make_map(grid, m);
  const long long total = grid.num_points();
  for (long long p = 0; p < total; ++p) {
    auto idx = unflatten(grid, p);
    double x[3];
    point_of(grid, idx, x);
    if (cfg.initial_kind == "inclusion") {
      for (int a = 0; a < n; ++a) out.f0.at(p, a) = x[a];
    } else if (cfg.initial_kind == "scaled") {
      for (int a = 0; a < n; ++a) out.f0.at(p, a) = cfg.initial_scale * x[a];
    } else if (cfg.initial_kind == "graph") {
      for (int a = 0; a < n; ++a) out.f0.at(p, a) = x[a];
      double bump = cfg.bump_amp;
      for (int a = 0; a < n; ++a) bump *= std::sin(cfg.bump_freq * x[a]);
      out.f0.at(p, n) = bump;
    } else {
      throw Error(ErrorCode::config, "initial_data: unknown base embedding " + cfg.initial_kind);
    }
  }

  // P with |P|_0 <= lambda_0^{-eps} and |P|_beta <= lambda_0^{beta-eps}.
  const double lam0 = std::pow(p0.z.a, 1.0);  // lambda_0 = a^{b^0}
  out.P_sup_budget = std::pow(lam0, -p0.z.epsilon);
  out.P_beta_budget = std::pow(lam0, p0.z.beta - p0.z.epsilon);
  const double amp = cfg.P_amp * out.P_sup_budget;

  GridField P = make_sym(grid);
  if (cfg.P_kind == "diag") {
    for (long long p = 0; p < total; ++p) {
      auto idx = unflatten(grid, p);
      double x[3];
      point_of(grid, idx, x);
      double s = 0.0;
      for (int a = 0; a < n; ++a) s += x[a];
      for (int a = 0; a < n; ++a) P.sym_at(p, a, a) = amp * std::sin(cfg.P_freq * s + 0.7 * a);
    }
  } else if (cfg.P_kind == "random") {
    Rng rng(cfg.seed);
    struct Mode { double k[3]; double phase; double coef; int i, j; };
    std::vector<Mode> modes;
    for (int mcount = 0; mcount < cfg.P_modes; ++mcount)
      for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j) {
          Mode mo;
          for (int a = 0; a < n; ++a) mo.k[a] = rng.uniform(-cfg.P_freq, cfg.P_freq);
          mo.phase = rng.uniform(0.0, 2.0 * M_PI);
          mo.coef = rng.uniform(-1.0, 1.0);
          mo.i = i;
          mo.j = j;
          modes.push_back(mo);
        }
    for (long long p = 0; p < total; ++p) {
      auto idx = unflatten(grid, p);
      double x[3];
      point_of(grid, idx, x);
      for (const auto& mo : modes) {
        double ph = mo.phase;
        for (int a = 0; a < n; ++a) ph += mo.k[a] * x[a];
        P.sym_at(p, mo.i, mo.j) += std::sin(ph) * mo.coef * amp / cfg.P_modes;
      }
    }
  } else if (cfg.P_kind != "none") {
    throw Error(ErrorCode::config, "initial_data: unknown P kind " + cfg.P_kind);
  }

  out.P_sup = sup_norm(P);
  out.P_beta = holder_norm(P, 0, p0.z.beta, cfg.pair_budget).value;
  if (out.P_sup > out.P_sup_budget * (1.0 + 1e-9) ||
      out.P_beta > out.P_beta_budget * (1.0 + 1e-9))
    throw Error(ErrorCode::stage_hypothesis,
                "initial_data: P exceeds the q=0 hypothesis budget");

  MetricField pb = pullback(out.f0);
  fill_rim(pb);
  out.g = make_sym(grid);
  for (long long p = 0; p < total; ++p)
    for (int i = 0; i < n; ++i)
      for (int j = i; j < n; ++j)
        out.g.sym_at(p, i, j) = pb.sym_at(p, i, j) +
                                p0.delta_q1 * ((i == j ? 1.0 : 0.0) + P.sym_at(p, i, j));

  MetricField short_def = axpby(1.0, out.g, -1.0, pb);
  if (min_eigenvalue(short_def) <= 0.0)
    throw Error(ErrorCode::stage_hypothesis, "initial_data: f0 not short for g");
  return out;
}

StageOptions stage_options(const RunConfig& cfg) {
  StageOptions o;
  o.newton.sigma1 = cfg.sigma1;
  o.newton.sigma_floor = cfg.sigma_floor;
  o.theta = cfg.theta;
  o.theta_hard = cfg.theta_hard;
  o.kallen_steps = cfg.kallen_steps;
  o.min_points_per_rad = cfg.min_points_per_rad;
  o.min_lambda_ell = cfg.min_lambda_ell;
  o.keep_ledger_fields = cfg.keep_ledger_fields;
  o.track_derivative_norms = cfg.track_derivative_norms;
  o.pair_budget = cfg.pair_budget;
  return o;
}

StageResult run_stage(GridField f_q, const MetricField& g, const StageParams& params,
                      FrameVariant variant, const StageOptions& opt,
                      const FrameField* prev_frames) {
  const auto t0 = std::chrono::steady_clock::now();
  const int n = f_q.grid.n;
  StageResult res;
  StageReport& rep = res.report;
  rep.q = params.q;
  rep.params = params;

  const double osc = (variant == FrameVariant::Strain) ? 2.0 * params.lambda_q1 : params.lambda_q1;
  if (f_q.grid.spacing > 1.0 / (opt.min_points_per_rad * osc))
    throw Error(ErrorCode::resolution,
                "run_stage: resolution rule spacing <= 1/(20 lambda_osc) violated");

  // (1) mollify at ell, shrinking the domain by exactly ell.
  GridField f_ell = mollify(f_q, params.ell);
  f_q.samples.clear();
  f_q.samples.shrink_to_fit();
  MetricField g_ell = pullback(f_ell);

  // (2) metric error h with the theta guard.
  const double hexp = std::max(params.z.epsilon * params.z.epsilon, 0.01);
  MetricField h = metric_error_h(g, g_ell, params.delta_q1, params.delta_q2, params.theta, hexp,
                                 &rep.herr);
  rep.theta_warning = !rep.herr.theta_ok;
  if (!rep.herr.theta_ok && opt.theta_hard)
    throw Error(ErrorCode::stage_hypothesis, "run_stage: |h - Id| exceeds theta (hard mode)");

  // (3) frames on the mollified map, seeded from the previous stage.
  DirectionSet dirs = make_directions(n);
  res.frames = (variant == FrameVariant::Spiral)
                   ? spiral_frames(f_ell, dirs, prev_frames)
                   : strain_frames(f_ell, g_ell, dirs, prev_frames);
  rep.frames = frame_quality(res.frames, f_ell, dirs);

  // (4)-(5) tau tensors and the Kallen iteration.
  StageOps ops(f_ell, res.frames, dirs, params.lambda_q1, params.delta_q1);
  ops.tau_norms(&rep.tau_k_max, &rep.tau_kk_max);

  KallenConfig kcfg;
  kcfg.steps = params.kallen_steps;
  kcfg.lambda = params.lambda_q1;
  kcfg.ell = params.ell;
  kcfg.min_lambda_ell = opt.min_lambda_ell;
  kcfg.track_derivative_norms = opt.track_derivative_norms;
  kcfg.track_mixed_bilinear = opt.track_derivative_norms;
  auto [A, trace] =
      kallen_iterate(h, ops.kallen_forms(h, opt.newton, 10 + 2 * params.kallen_steps), kcfg);
  rep.kallen = trace;

  // (6)-(7) perturbation and the new embedding.
  GridField w = ops.build_perturbation(A, opt.min_points_per_rad);
  res.f_next = axpby(1.0, f_ell, 1.0, w);
  res.f_next.grid.radius = f_ell.grid.radius;
  rep.radius_next = res.f_next.grid.radius;
  rep.grid_spacing = f_ell.grid.spacing;

  // (8) ledger plus the master reconstruction check.
  rep.ledger = ops.ledger(A, g_ell, opt.keep_ledger_fields);
  MetricField g_next = pullback(res.f_next);
  {
    GridSpec probe = g_next.grid;
    probe.radius = std::min(probe.radius, rep.ledger.reconstructed.grid.radius);
    double resid = 0.0, scale = 0.0;
    const int nn = n;
    for_each_valid(probe, [&](long long p, const std::array<int, 3>&) {
      for (int i = 0; i < nn; ++i)
        for (int j = i; j < nn; ++j) {
          resid = std::max(resid, std::abs(g_next.sym_at(p, i, j) -
                                           rep.ledger.reconstructed.sym_at(p, i, j)));
          scale = std::max(scale, std::abs(rep.ledger.reconstructed.sym_at(p, i, j) -
                                           g_ell.sym_at(p, i, j)));
        }
    });
    rep.ledger.master_residual = resid;
    rep.ledger.master_scale = scale;
  }

  // Conclusion checks of the inductive step.
  MetricField defect = axpby(1.0, g, -1.0, g_next);
  rep.min_eig_short = min_eigenvalue(defect);
  {
    GridField dev = defect;
    const long long total = dev.grid.num_points();
    for (long long p = 0; p < total; ++p) {
      for (int i = 0; i < n; ++i) dev.sym_at(p, i, i) -= params.delta_q2;
    }
    rep.defect0 = sup_norm(dev);
    rep.defect_ratio = rep.defect0 / params.delta_q2;
    for (auto& s : dev.samples) s /= params.delta_q2;
    rep.defect0_normalized = sup_norm(dev);
    rep.defect_beta = holder_norm(dev, 0, params.z.beta, opt.pair_budget).value;
  }
  rep.budget_eps = std::pow(params.lambda_q1, -params.z.epsilon);
  rep.budget_beta = std::pow(params.lambda_q1, params.z.beta - params.z.epsilon);

  rep.w.w0 = cr_norm(w, 0);
  rep.w.w1 = cr_norm(w, 1);
  rep.w.w2 = cr_norm(w, 2);
  const double sd = std::sqrt(params.delta_q1);
  rep.w.C0 = rep.w.w0 / (sd / params.lambda_q1);
  rep.w.C1 = rep.w.w1 / sd;
  rep.w.C2 = rep.w.w2 / (sd * params.lambda_q1);
  rep.kappa0 = cr_norm(res.f_next, 0);
  rep.kappa1 = cr_norm(res.f_next, 1);
  rep.kappa2 = cr_norm(res.f_next, 2);

  rep.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

RunSummary run(const RunConfig& cfg) {
  AnsatzParams z{cfg.a, cfg.b, cfg.alpha, cfg.beta, cfg.epsilon};
  const FrameVariant variant =
      cfg.variant == "spiral" ? FrameVariant::Spiral : FrameVariant::Strain;
  if (cfg.variant != "spiral" && cfg.variant != "strain")
    throw Error(ErrorCode::config, "run: unknown variant " + cfg.variant);
  StageOptions opt = stage_options(cfg);

  // Feasibility of the whole run before any stage executes: every schedule,
  // the resolution rule at lambda_Q, and the total shrink against the margin.
  std::vector<StageParams> params;
  double shrink = 0.0;
  for (int q = 0; q < cfg.stages; ++q) {
    params.push_back(schedule(q, z, cfg.theta, cfg.kallen_steps));
    shrink += params.back().ell;
  }
  if (shrink > cfg.margin)
    throw Error(ErrorCode::config, "run: total shrink sum(ell_q) exceeds the margin mu");
  if (cfg.margin >= cfg.radius)
    throw Error(ErrorCode::config, "run: margin must stay below the grid radius");
  const double spacing = 2.0 * cfg.radius / (cfg.points_per_axis - 1 - 2 * cfg.pad_cells);
  const double osc_last = (variant == FrameVariant::Strain ? 2.0 : 1.0) * params.back().lambda_q1;
  if (spacing > 1.0 / (cfg.min_points_per_rad * osc_last))
    throw Error(ErrorCode::resolution,
                "run: resolution rule fails at lambda_Q; enlarge the grid or shrink radius");

  RunSummary sum;
  InitialData init = initial_data(cfg, params[0]);
  GridField f = init.f0;
  FrameField frames;
  bool have_frames = false;

  for (int q = 0; q < cfg.stages; ++q) {
    StageResult r = run_stage(std::move(f), init.g, params[q], variant, opt,
                              have_frames ? &frames : nullptr);
    f = std::move(r.f_next);
    frames = std::move(r.frames);
    have_frames = true;
    sum.reports.push_back(std::move(r.report));
    sum.total_shrink += params[q].ell;
  }

  sum.alpha_prime = cfg.alpha_prime_factor * cfg.alpha / cfg.b;
  double Cmax = 0.0, Cmin = std::numeric_limits<double>::infinity();
  for (const auto& r : sum.reports) {
    Cmax = std::max({Cmax, r.w.C0, r.w.C1, r.w.C2});
    Cmin = std::min({Cmin, r.w.C0, r.w.C1, r.w.C2});
  }
  sum.C_w_max = Cmax;
  sum.C_w_min = Cmin;
  for (const auto& r : sum.reports)
    sum.partial_sum +=
        Cmax * std::sqrt(r.params.delta_q1) * std::pow(r.params.lambda_q1, sum.alpha_prime);

  GridField diff = axpby(1.0, f, -1.0, init.f0);
  diff.grid.radius = f.grid.radius;
  sum.measured_diff = holder_norm(diff, 1, sum.alpha_prime, cfg.pair_budget).value;
  sum.f_final = std::move(f);
  return sum;
}

// --- reports ----------------------------------------------------------------

std::string stage_report_json(const StageReport& r) {
  nlohmann::json j;
  j["q"] = r.q;
  j["params"] = {{"a", r.params.z.a},
                 {"b", r.params.z.b},
                 {"alpha", r.params.z.alpha},
                 {"beta", r.params.z.beta},
                 {"epsilon", r.params.z.epsilon},
                 {"delta_q", r.params.delta_q},
                 {"delta_q1", r.params.delta_q1},
                 {"delta_q2", r.params.delta_q2},
                 {"lambda_q", r.params.lambda_q},
                 {"lambda_q1", r.params.lambda_q1},
                 {"ell", r.params.ell},
                 {"lambda_ell", r.params.lambda_ell},
                 {"bound2", r.params.checks.bound2},
                 {"bound3", r.params.checks.bound3},
                 {"bound4", r.params.checks.bound4}};
  j["defect"] = {{"sup", r.defect0},
                 {"ratio_delta_q2", r.defect_ratio},
                 {"normalized_sup", r.defect0_normalized},
                 {"normalized_beta", r.defect_beta},
                 {"budget_eps", r.budget_eps},
                 {"budget_beta", r.budget_beta},
                 {"min_eig_short", r.min_eig_short}};
  j["w"] = {{"w0", r.w.w0}, {"w1", r.w.w1}, {"w2", r.w.w2},
            {"C0", r.w.C0}, {"C1", r.w.C1}, {"C2", r.w.C2}};
  j["kappa"] = {r.kappa0, r.kappa1, r.kappa2};
  j["h"] = {{"min_eig", r.herr.min_eig},
            {"dev_norm", r.herr.h_minus_id_norm},
            {"exponent", r.herr.holder_exponent},
            {"theta_ok", r.herr.theta_ok}};
  j["tau"] = {{"tau_k_max", r.tau_k_max}, {"tau_kk_max", r.tau_kk_max}};
  j["frames"] = {{"tangent_dot", r.frames.max_tangent_dot},
                 {"gram_residual", r.frames.max_gram_residual},
                 {"identity_residual", r.frames.max_identity_residual}};
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : r.kallen.records)
    steps.push_back({{"step", s.step},
                     {"E0", s.E0},
                     {"E1", s.E1},
                     {"E2", s.E2},
                     {"da0", s.da0},
                     {"rho", s.rho},
                     {"bilinear_mixed", s.bilinear_mixed}});
  j["kallen"] = {{"lambda_ell", r.kallen.lambda_ell},
                 {"lambda_ell_small", r.kallen.lambda_ell_small},
                 {"steps", steps}};
  nlohmann::json terms = nlohmann::json::object();
  for (const auto& e : r.ledger.entries) terms[e.name] = {{"norm0", e.norm0}, {"norm1", e.norm1}};
  j["ledger"] = {{"terms", terms},
                 {"quad_identity_residual", r.ledger.quad_identity_residual},
                 {"master_residual", r.ledger.master_residual},
                 {"master_scale", r.ledger.master_scale},
                 {"r6_max", r.ledger.r6_max},
                 {"r0_max", r.ledger.r0_max},
                 {"r7_identity_residual", r.ledger.r7_identity_residual},
                 {"cancellation_joint", r.ledger.cancellation_joint},
                 {"scale", r.ledger.ledger_scale}};
  j["radius_next"] = r.radius_next;
  j["wall_seconds"] = r.wall_seconds;
  return j.dump(2);
}

std::string series_csv_header() {
  return "q,delta,lambda,ell,defect0,defect_beta,w0,w1,w2,minEig,C_w,rho_kallen\n";
}

std::string series_csv_row(const StageReport& r) {
  std::ostringstream o;
  o.precision(17);
  double rho = r.kallen.records.empty() ? 0.0 : r.kallen.records.back().rho;
  double Cw = std::max({r.w.C0, r.w.C1, r.w.C2});
  o << r.q << "," << r.params.delta_q1 << "," << r.params.lambda_q1 << "," << r.params.ell << ","
    << r.defect0 << "," << r.defect_beta << "," << r.w.w0 << "," << r.w.w1 << "," << r.w.w2 << ","
    << r.min_eig_short << "," << Cw << "," << rho << "\n";
  return o.str();
}

}  // namespace isolab
