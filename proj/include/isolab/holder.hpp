#pragma once

#include "isolab/grid.hpp"

namespace isolab {

struct HolderEstimate {
  int k = 0;
  double alpha = 1.0;
  double value = 0.0;        // sup part + seminorm part
  double sup_part = 0.0;     // max of |d^a f|, |a| <= k
  double semi_part = 0.0;    // dyadic pair-sampled seminorm at order k
  long long pair_budget = 0;
  long long pairs_used = 0;
};

// C^{k,alpha} norm estimate: sup of all derivatives up to order k plus the
// order-k seminorm sampled over dyadic separations in axis and diagonal
// directions. The seminorm is a certified lower bound, monotone in budget.
HolderEstimate holder_norm(const GridField& f, int k, double alpha,
                           long long pair_budget = 1'000'000);

// sup-norm of all derivatives up to order r (the paper's integer C^r norm).
double cr_norm(const GridField& f, int r);

// Norm at fractional order a: a = 0 is sup, otherwise k = ceil(a)-1, alpha = a-k.
double holder_norm_frac(const GridField& f, double a, long long pair_budget = 1'000'000);

struct InterpolationReport {
  double lhs = 0.0;      // |f|_alpha
  double rhs = 0.0;      // |f|_a1^lam * |f|_a2^(1-lam)
  double alpha = 0.0;
  double endpoint_factor = 1.0;  // 2^(2 lam) when a1 = 0, else 1
  bool pass = false;     // lhs <= 1.05 * endpoint_factor * rhs
};

// Checks |f|_alpha <= |f|_a1^lam |f|_a2^(1-lam) with 5% discretization slack.
// The constant is exactly one when both endpoints carry a seminorm slot; at
// a1 = 0 the sup norm has none and the sharp modulus bound costs 2^(2 lam)
// (|f(x)-f(y)| <= 2 |f|_0), which the check includes.
InterpolationReport interpolation_check(const GridField& f, double a1, double a2, double lam,
                                        long long pair_budget = 1'000'000);

// All distinct derivative fields of exact order k (lexicographic multi-indices).
std::vector<GridField> derivatives_of_order(const GridField& f, int k);

}  // namespace isolab
