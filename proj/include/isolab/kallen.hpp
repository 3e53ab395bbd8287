#pragma once

#include <functional>

#include "isolab/decomp.hpp"
#include "isolab/grid.hpp"

namespace isolab {

struct KallenConfig {
  int steps = 5;
  double lambda = 0.0;       // lambda_{q+1}
  double ell = 0.0;          // L
  double c_star = 1.0;       // reported solver guard constant
  double min_lambda_ell = 1.0;  // hard floor; values below ~10 are flagged
  bool track_derivative_norms = true;
  bool track_mixed_bilinear = true;  // the polarized R bound costs two passes
};

struct KallenStepRecord {
  int step = 0;
  double E0 = 0.0, E1 = 0.0, E2 = 0.0;  // |E_s| in C^0, C^1, C^2
  double da0 = 0.0;                      // |a^{(s)} - a^{(s-1)}|_0
  double rho = 0.0;                      // E0 ratio against previous step
  double bilinear_mixed = 0.0;  // |R(a^s, da)|_0 + |R(da, a^{s-1})|_0
};

struct IterationTrace {
  std::vector<KallenStepRecord> records;
  bool lambda_ell_small = false;  // lambda*ell below 10
  double lambda_ell = 0.0;
};

// The two forms the iteration needs: F (the decomposition inverse of b) and
// the polarized bilinear error R(a,b).
struct KallenForms {
  std::function<CoefficientField(const MetricField& T, const CoefficientField* warm)> solve;
  std::function<MetricField(const CoefficientField&)> b_eval;
  std::function<MetricField(const CoefficientField&, const CoefficientField&)> R_bilinear;
  // Optional fused single-pass evaluation of (b(a,a), R(a,a)).
  std::function<std::pair<MetricField, MetricField>(const CoefficientField&)> bR_eval;
};

// Pointwise E = T - b(a,a) - R(a,a); exact algebra, no solves.
MetricField kallen_residual(const MetricField& T, const CoefficientField& a,
                            const KallenForms& forms);

// a^(0) = 0, a^(1) = F(T), a^(s+1) = F(T - R(a^(s))). This update makes
// E_{s+1} = R(a^(s)) - R(a^(s+1)) hold identically up to solver tolerance.
std::pair<CoefficientField, IterationTrace> kallen_iterate(const MetricField& T,
                                                           const KallenForms& forms,
                                                           const KallenConfig& cfg);

// Scalar instance (one direction, b(a) = a^2, R(a) = eps*a) used by the toy
// subcommand; returns the iterate after `steps` together with the error trace.
std::pair<double, std::vector<double>> kallen_toy(double T, double eps, int steps);

}  // namespace isolab
