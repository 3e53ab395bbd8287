#include "isolab/kallen.hpp"

#include <cmath>

#include "isolab/holder.hpp"

namespace isolab {

MetricField kallen_residual(const MetricField& T, const CoefficientField& a,
                            const KallenForms& forms) {
  MetricField b, R;
  if (forms.bR_eval) {
    auto pr = forms.bR_eval(a);
    b = std::move(pr.first);
    R = std::move(pr.second);
  } else {
    b = forms.b_eval(a);
    R = forms.R_bilinear(a, a);
  }
  MetricField E = axpby(1.0, T, -1.0, b);
  E = axpby(1.0, E, -1.0, R);
  return E;
}

std::pair<CoefficientField, IterationTrace> kallen_iterate(const MetricField& T,
                                                           const KallenForms& forms,
                                                           const KallenConfig& cfg) {
  if (cfg.steps < 1) throw Error(ErrorCode::config, "kallen_iterate: steps must be >= 1");
  IterationTrace trace;
  trace.lambda_ell = cfg.lambda * cfg.ell;
  if (trace.lambda_ell <= cfg.min_lambda_ell)
    throw Error(ErrorCode::config, "kallen_iterate: lambda*ell at or below the hard floor");
  trace.lambda_ell_small = trace.lambda_ell < 10.0;

  auto record = [&](int step, const MetricField& E, double da0, double prevE0,
                    double bilinear_mixed) {
    KallenStepRecord r;
    r.step = step;
    r.E0 = sup_norm(E);
    if (cfg.track_derivative_norms) {
      r.E1 = cr_norm(E, 1);
      r.E2 = cr_norm(E, 2);
    }
    r.da0 = da0;
    r.rho = prevE0 > 0.0 ? r.E0 / prevE0 : 0.0;
    r.bilinear_mixed = bilinear_mixed;
    trace.records.push_back(r);
  };

  auto fused = [&](const CoefficientField& a) {
    if (forms.bR_eval) return forms.bR_eval(a);
    return std::make_pair(forms.b_eval(a), forms.R_bilinear(a, a));
  };

  CoefficientField a = forms.solve(T, nullptr);  // a^(1)
  auto [b1, R1] = fused(a);
  MetricField R = std::move(R1);
  MetricField E = axpby(1.0, axpby(1.0, T, -1.0, b1), -1.0, R);
  record(1, E, sup_norm(a.A), 0.0, 0.0);

  int grew = 0;
  for (int s = 1; s < cfg.steps; ++s) {
    MetricField target = axpby(1.0, T, -1.0, R);
    CoefficientField next = forms.solve(target, &a);

    CoefficientField diff = next;
    diff.A = axpby(1.0, next.A, -1.0, a.A);
    double da0 = sup_norm(diff.A);

    double mixed = 0.0;
    if (cfg.track_mixed_bilinear)
      mixed = sup_norm(forms.R_bilinear(next, diff)) + sup_norm(forms.R_bilinear(diff, a));

    auto [bn, Rn] = fused(next);
    MetricField Enext = axpby(1.0, axpby(1.0, T, -1.0, bn), -1.0, Rn);
    R = std::move(Rn);
    record(s + 1, Enext, da0, trace.records.back().E0, mixed);

    const auto& recs = trace.records;
    if (recs.size() >= 3 && recs.back().da0 > recs[recs.size() - 2].da0 &&
        recs[recs.size() - 2].da0 > recs[recs.size() - 3].da0)
      ++grew;
    else
      grew = 0;
    if (grew >= 2)
      throw Error(ErrorCode::divergence, "kallen_iterate: coefficient updates growing");

    a = std::move(next);
    E = std::move(Enext);
  }
  return {a, trace};
}

std::pair<double, std::vector<double>> kallen_toy(double T, double eps, int steps) {
  // b(a) = a^2, F(t) = sqrt(t), R(a) = eps*a on a single point.
  double a = std::sqrt(T);
  std::vector<double> errors;
  errors.push_back(std::abs(T - a * a - eps * a));
  for (int s = 1; s < steps; ++s) {
    a = std::sqrt(T - eps * a);
    errors.push_back(std::abs(T - a * a - eps * a));
  }
  return {a, errors};
}

}  // namespace isolab
