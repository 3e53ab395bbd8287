#pragma once

#include <cstdint>
#include <string>

namespace isolab {

// One structured config file drives every run; all defaults live here and are
// echoed into reports for provenance.
struct RunConfig {
  // [run]
  std::string variant = "strain";
  int n = 2;
  int stages = 1;
  int kallen_steps = 5;
  uint64_t seed = 42;
  std::string out_dir = "out";

  // [ansatz]
  double a = 100.0;
  double b = 1.05;
  double alpha = 0.5;
  double beta = 0.1;
  double epsilon = 0.01;

  // [grid]
  int points_per_axis = 257;
  double radius = 0.2;
  double margin = 0.05;  // allowed total shrink sum_q ell_q
  int pad_cells = 12;

  // [initial]
  std::string initial_kind = "inclusion";  // inclusion | scaled | graph
  double initial_scale = 0.95;             // scaled inclusion factor
  double bump_amp = 0.05;                  // graph bump amplitude
  double bump_freq = 2.0;
  std::string P_kind = "diag";  // none | diag | random
  double P_amp = 0.5;           // relative to lambda_0^{-epsilon}
  double P_freq = 3.0;
  int P_modes = 4;              // random band-limited mode count

  // [tolerances]
  double theta = 0.1;
  bool theta_hard = false;
  double sigma1 = 0.2;
  double sigma_floor = 0.05;
  double frame_tol = 1e-10;
  double min_points_per_rad = 20.0;
  double min_lambda_ell = 1.0;
  long long pair_budget = 1000000;
  double alpha_prime_factor = 0.9;  // alpha' = factor * alpha / b

  bool keep_ledger_fields = false;
  bool track_derivative_norms = true;
};

RunConfig parse_config(const std::string& text);
RunConfig parse_config_file(const std::string& path);
std::string emit_config(const RunConfig& c);

}  // namespace isolab
