#pragma once

#include "isolab/grid.hpp"
#include "isolab/mollify.hpp"
#include "isolab/rng.hpp"

namespace isolab {

// Random band-limited scalar field: log-spaced frequencies in [kmin, kmax],
// amplitudes k^{-spectrum}, random directions and phases.
GridField make_band_limited(const GridSpec& g, Rng& rng, double kmin, double kmax, int modes,
                            double spectrum);

// Piecewise-linear field, max of a few random affine functions: Lipschitz but
// kinked, the saturating class for the O(ell) mollification estimate.
GridField make_kink_field(const GridSpec& g, Rng& rng, int planes);

struct MollifyBenchResult {
  double order_i = 0;    // nominal -s
  double order_ii = 0;   // nominal 2
  double order_iii = 0;  // nominal 2 alpha - r
  double order_iv = 0;   // nominal 1
  int s = 1;
  double alpha = 1.0;
  double commutator_min_order = 0;  // worst order across the random pair corpus
  bool pass(double tol = 0.3) const {
    return std::abs(order_i + s) <= tol && std::abs(order_ii - 2.0) <= tol &&
           std::abs(order_iii - 2.0 * alpha) <= tol && std::abs(order_iv - 1.0) <= tol;
  }
};

// Measures each mollification estimate on the spectral class that saturates
// it, plus the commutator order over `pairs` random band-limited pairs.
MollifyBenchResult mollify_bench(uint64_t seed, int points_per_axis = 321, int pairs = 50);

}  // namespace isolab
