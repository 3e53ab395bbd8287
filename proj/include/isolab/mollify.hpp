#pragma once

#include "isolab/grid.hpp"

namespace isolab {

// Radial polynomial bump phi(x) = c_n (1-|x|^2)^4 on |x| <= 1. The discrete
// sampling at each scale is renormalized to unit mass, which keeps constants
// an exact fixed point of mollification.
struct Kernel {
  static double profile(double r2) {
    if (r2 >= 1.0) return 0.0;
    double t = 1.0 - r2;
    t *= t;  // ^2
    return t * t;  // ^4
  }
};

// Discrete convolution f * phi_ell; the output radius shrinks by ell.
GridField mollify(const GridField& f, double ell);

struct RateFit {
  double order = 0.0;        // fitted log-log slope of lhs vs ell
  std::vector<double> lhs;   // measured left-hand sides per scale
};

struct MollificationRates {
  RateFit i;    // [f*phi]_{r+s}        nominal order -s
  RateFit ii;   // [f - f*phi]_r        nominal order  2
  RateFit iii;  // commutator, order    nominal 2*alpha - r
  RateFit iv;   // |f - f*phi|_0        nominal order  1
  int r = 0, s = 1;
  double alpha = 1.0;
  bool pass(double tol = 0.3) const;
};

// Fits empirical orders for the four mollification estimates on (f, g).
// Each estimate saturates on its own regularity class, so callers pick fields
// accordingly (see the bench command).
MollificationRates verify_mollification_rates(const GridField& f, const GridField& g,
                                              const std::vector<double>& ell_list, int r,
                                              double alpha, int s = 1);

// Least-squares slope of log(y) against log(x).
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace isolab
