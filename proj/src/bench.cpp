#include "isolab/bench.hpp"

#include <cmath>

#include "isolab/holder.hpp"

namespace isolab {

GridField make_band_limited(const GridSpec& g, Rng& rng, double kmin, double kmax, int modes,
                            double spectrum) {
  GridField f = make_scalar(g);
  struct Mode { double k[3]; double amp, phase; };
  std::vector<Mode> ms;
  for (int i = 0; i < modes; ++i) {
    Mode m;
    double t = modes == 1 ? 0.0 : double(i) / (modes - 1);
    double k = kmin * std::pow(kmax / kmin, t);
    double th = rng.uniform(0.0, 2.0 * M_PI);
    if (g.n == 1) {
      m.k[0] = k;
    } else if (g.n == 2) {
      m.k[0] = k * std::cos(th);
      m.k[1] = k * std::sin(th);
    } else {
      double ph = rng.uniform(0.0, M_PI);
      m.k[0] = k * std::sin(ph) * std::cos(th);
      m.k[1] = k * std::sin(ph) * std::sin(th);
      m.k[2] = k * std::cos(ph);
    }
    m.amp = std::pow(k, -spectrum) * (0.5 + rng.uniform());
    m.phase = rng.uniform(0.0, 2.0 * M_PI);
    ms.push_back(m);
  }
  const long long total = g.num_points();
  for (long long p = 0; p < total; ++p) {
    auto idx = unflatten(g, p);
    double x[3];
    point_of(g, idx, x);
    double v = 0.0;
    for (const auto& m : ms) {
      double ph = m.phase;
      for (int a = 0; a < g.n; ++a) ph += m.k[a] * x[a];
      v += m.amp * std::sin(ph);
    }
    f.at(p, 0) = v;
  }
  return f;
}

GridField make_kink_field(const GridSpec& g, Rng& rng, int planes) {
  GridField f = make_scalar(g);
  struct Plane { double n[3]; double off, slope; };
  std::vector<Plane> ps;
  for (int i = 0; i < planes; ++i) {
    Plane pl;
    double th = rng.uniform(0.0, 2.0 * M_PI);
    pl.n[0] = std::cos(th);
    pl.n[1] = g.n >= 2 ? std::sin(th) : 0.0;
    pl.n[2] = 0.0;
    pl.off = rng.uniform(-0.5 * g.radius, 0.5 * g.radius);
    pl.slope = rng.uniform(0.5, 1.0);
    ps.push_back(pl);
  }
  const long long total = g.num_points();
  for (long long p = 0; p < total; ++p) {
    auto idx = unflatten(g, p);
    double x[3];
    point_of(g, idx, x);
    double v = -1e300;
    for (const auto& pl : ps) {
      double t = -pl.off;
      for (int a = 0; a < g.n; ++a) t += pl.n[a] * x[a];
      v = std::max(v, pl.slope * std::abs(t));
    }
    f.at(p, 0) = v;
  }
  return f;
}

MollifyBenchResult mollify_bench(uint64_t seed, int points_per_axis, int pairs) {
  MollifyBenchResult res;
  Rng rng(seed);
  GridSpec g = make_grid(2, points_per_axis, 1.0);

  // (i) broadband: sup|d(f*phi_ell)| saturates at C/ell.
  {
    GridField f = make_band_limited(g, rng, 5.0, 110.0, 30, 0.0);
    std::vector<double> ells{0.26, 0.2, 0.15, 0.115, 0.085, 0.065};
    GridField zero = make_scalar(g);
    auto r = verify_mollification_rates(f, zero, ells, 0, 1.0, 1);
    res.order_i = r.i.order;
  }
  // (ii) smooth class: [f - f*phi]_0 = O(ell^2).
  {
    GridField f = make_band_limited(g, rng, 3.0, 8.0, 8, 3.0);
    std::vector<double> ells{0.1, 0.07, 0.05, 0.035};
    GridField zero = make_scalar(g);
    auto r = verify_mollification_rates(f, zero, ells, 0, 1.0, 1);
    res.order_ii = r.ii.order;
  }
  // (iii) commutator at alpha = 1 on Lipschitz-class pairs, plus the corpus
  // (half resolution keeps the 50-pair sweep cheap).
  {
    GridSpec gc = make_grid(2, std::max(points_per_axis / 2 + 1, 201), 1.0);
    std::vector<double> ells{0.14, 0.11, 0.085, 0.065};
    double fit_first = 0.0;
    double min_order = 1e300;
    for (int i = 0; i < pairs; ++i) {
      GridField f = make_band_limited(gc, rng, 3.5, 5.0, 6, 1.0);
      GridField h = make_band_limited(gc, rng, 3.5, 5.0, 6, 1.0);
      auto r = verify_mollification_rates(f, h, ells, 0, 1.0, 1);
      if (i == 0) fit_first = r.iii.order;
      min_order = std::min(min_order, r.iii.order);
    }
    res.order_iii = fit_first;
    res.commutator_min_order = min_order;
  }
  // (iv) kinked Lipschitz class: |f - f*phi|_0 = O(ell).
  {
    GridField f = make_kink_field(g, rng, 5);
    std::vector<double> ells{0.2, 0.14, 0.1, 0.07};
    GridField zero = make_scalar(g);
    auto r = verify_mollification_rates(f, zero, ells, 0, 1.0, 1);
    res.order_iv = r.iv.order;
  }
  return res;
}

}  // namespace isolab
