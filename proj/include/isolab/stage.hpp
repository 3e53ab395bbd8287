#pragma once

#include "isolab/config.hpp"
#include "isolab/kallen.hpp"
#include "isolab/perturb.hpp"

namespace isolab {

struct AnsatzParams {
  double a = 100.0, b = 1.05, alpha = 0.5, beta = 0.1, epsilon = 0.01;
};

struct ScheduleChecks {
  bool restriction2 = false;  // 2*alpha < 2 - beta
  bool bound2 = false;        // lambda_q ell <= 1 <= lambda_{q+1} ell
  bool bound3 = false;        // delta_q^1/2 lambda_q ell <= delta_{q+1}^1/2 lambda_{q+1} ell <= 1
  bool bound4 = false;        // (lambda_{q+1} ell)^{-s} <= delta_{q+2} lambda_{q+1}^{-eps}
  bool all_hard() const { return restriction2 && bound2 && bound3; }
};

// One stage's parameter pack from the double exponential ansatz
// delta_q = a^(-2 alpha b^(q-1)), lambda_q = a^(b^q).
struct StageParams {
  int q = 0;
  AnsatzParams z;
  double delta_q = 0, delta_q1 = 0, delta_q2 = 0;
  double lambda_q = 0, lambda_q1 = 0;
  double beta_star = 0, eps_star = 0;
  double ell = 0;
  double lambda_ell = 0;  // lambda_{q+1} * ell
  double theta = 0.1;
  int kallen_steps = 5;
  ScheduleChecks checks;
};

ScheduleChecks schedule_check(int q, const AnsatzParams& z, int steps);

// Computes the stage parameters; throws a configuration error naming every
// violated hard inequality. bound4 is recorded, not enforced (the paper's
// s0(b, beta) is existential; reports state whether it holds for the
// configured step count).
StageParams schedule(int q, const AnsatzParams& z, double theta = 0.1, int kallen_steps = 5);

struct InitialData {
  GridField f0;
  MetricField g;
  double P_sup = 0, P_beta = 0;
  double P_sup_budget = 0, P_beta_budget = 0;
};

// Analytic short embedding plus g = pullback(f0) + delta_1 (Id + P), which
// satisfies the q = 0 induction hypotheses exactly.
InitialData initial_data(const RunConfig& cfg, const StageParams& p0);

struct WNorms {
  double w0 = 0, w1 = 0, w2 = 0;
  double C0 = 0, C1 = 0, C2 = 0;  // w_r / (delta^1/2 lambda^{r-1})
};

struct StageReport {
  int q = 0;
  StageParams params;
  double defect0 = 0;           // |g - g^{q+1} - delta_{q+2} Id|_0
  double defect_ratio = 0;      // defect0 / delta_{q+2}
  double defect_beta = 0;       // |(g - g^{q+1})/delta_{q+2} - Id|_beta
  double budget_eps = 0;        // lambda_{q+1}^{-epsilon}
  double budget_beta = 0;       // lambda_{q+1}^{beta-epsilon}
  double defect0_normalized = 0;  // |(g-g^{q+1})/delta_{q+2} - Id|_0
  double min_eig_short = 0;     // min eig of g - g^{q+1}
  WNorms w;
  double kappa0 = 0, kappa1 = 0, kappa2 = 0;  // |f_{q+1}|_r
  MetricErrorReport herr;
  bool theta_warning = false;
  double tau_k_max = 0, tau_kk_max = 0;
  IterationTrace kallen;
  ErrorLedger ledger;
  FrameQuality frames;
  double radius_next = 0;
  double grid_spacing = 0;
  double wall_seconds = 0;
};

struct StageOptions {
  NewtonOptions newton;
  double theta = 0.1;
  bool theta_hard = false;
  int kallen_steps = 5;
  double min_points_per_rad = 20.0;
  double min_lambda_ell = 1.0;
  bool keep_ledger_fields = false;
  bool track_derivative_norms = true;
  long long pair_budget = 1000000;
};

StageOptions stage_options(const RunConfig& cfg);

struct StageResult {
  GridField f_next;
  FrameField frames;
  StageReport report;
};

// One inductive step: mollify, metric error, frames, tau tensors, Kallen
// iteration, perturbation, ledger, conclusion checks.
// f_q is taken by value and released once mollified; at production sizes the
// embedding fields dominate the footprint.
StageResult run_stage(GridField f_q, const MetricField& g, const StageParams& params,
                      FrameVariant variant, const StageOptions& opt,
                      const FrameField* prev_frames = nullptr);

struct RunSummary {
  std::vector<StageReport> reports;
  double total_shrink = 0;
  double alpha_prime = 0;
  double partial_sum = 0;      // sum_q C delta_{q+1}^1/2 lambda_{q+1}^{alpha'}
  double measured_diff = 0;    // |f_Q - f_0|_{1, alpha'}
  double C_w_max = 0, C_w_min = 0;
  GridField f_final;
};

RunSummary run(const RunConfig& cfg);

std::string stage_report_json(const StageReport& r);
std::string series_csv_header();
std::string series_csv_row(const StageReport& r);

}  // namespace isolab
