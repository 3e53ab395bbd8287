#include "isolab/mollify.hpp"

#include <cmath>

#include "isolab/holder.hpp"

namespace isolab {

GridField mollify(const GridField& f, double ell) {
  const GridSpec& g = f.grid;
  const double h = g.spacing;
  if (ell < 2.0 * h)
    throw Error(ErrorCode::resolution, "mollify: ell below 2*spacing, kernel not resolvable");
  if (ell >= g.radius)
    throw Error(ErrorCode::domain, "mollify: ell exceeds current radius, domain exhausted");

  // Sample the kernel once on cell offsets inside the support, renormalized
  // to unit discrete mass.
  const int K = int(std::floor(ell / h - 1e-12));
  const int N = g.points_per_axis;
  const int C = f.components;
  GridField out = f;
  out.grid.radius = g.radius - ell;

  if (g.n == 2) {
    // Row-structured correlation: for each kernel row dy keep the chord of
    // in-disc weights; the inner x loop is unit-stride on a scratch plane.
    struct Row { int dy, dx0, dx1; std::vector<double> w; };
    std::vector<Row> rows;
    double mass = 0.0;
    for (int dy = -K; dy <= K; ++dy) {
      Row r;
      r.dy = dy;
      r.dx0 = 1;
      r.dx1 = 0;
      for (int dx = -K; dx <= K; ++dx) {
        double t = (double(dx) * dx + double(dy) * dy) * h * h / (ell * ell);
        double w = Kernel::profile(t);
        if (w <= 0.0) continue;
        if (r.dx1 < r.dx0) r.dx0 = dx;
        r.dx1 = dx;
        r.w.push_back(w);
        mass += w;
      }
      if (!r.w.empty()) rows.push_back(std::move(r));
    }
    for (auto& r : rows)
      for (auto& w : r.w) w /= mass;

    std::vector<double> in(size_t(N) * N), res(size_t(N) * N);
    for (int c = 0; c < C; ++c) {
      for (long long p = 0; p < (long long)N * N; ++p) in[p] = f.samples[p * C + c];
      for (int y = K; y <= N - 1 - K; ++y) {
        double* dst = res.data() + size_t(y) * N;
        std::fill(dst + K, dst + N - K, 0.0);
        for (const Row& r : rows) {
          const double* src = in.data() + size_t(y + r.dy) * N;
          for (size_t j = 0; j < r.w.size(); ++j) {
            const double w = r.w[j];
            const double* sp = src + r.dx0 + (long long)j;
            for (int x = K; x <= N - 1 - K; ++x) dst[x] += w * sp[x];
          }
        }
        for (int x = K; x <= N - 1 - K; ++x) out.samples[(size_t(y) * N + x) * C + c] = dst[x];
      }
    }
    return out;
  }

  // 1D and 3D paths by direct tap summation.
  struct Tap { long long off; double w; };
  std::vector<Tap> taps;
  double mass = 0.0;
  std::array<int, 3> o{0, 0, 0};
  const int lo = -K, hi = K;
  auto push = [&](const std::array<int, 3>& o) {
    double r2 = 0.0;
    for (int a = 0; a < g.n; ++a) {
      double t = o[a] * h / ell;
      r2 += t * t;
    }
    double w = Kernel::profile(r2);
    if (w <= 0.0) return;
    long long off = 0;
    for (int a = g.n - 1; a >= 0; --a) off = off * N + o[a];
    taps.push_back({off, w});
    mass += w;
  };
  if (g.n == 1) {
    for (o[0] = lo; o[0] <= hi; ++o[0]) push(o);
  } else {
    for (o[2] = lo; o[2] <= hi; ++o[2])
      for (o[1] = lo; o[1] <= hi; ++o[1])
        for (o[0] = lo; o[0] <= hi; ++o[0]) push(o);
  }
  for (auto& t : taps) t.w /= mass;

  const long long total = g.num_points();
  std::vector<double> acc(C);
  for (long long p = 0; p < total; ++p) {
    auto idx = unflatten(g, p);
    bool fits = true;
    for (int a = 0; a < g.n; ++a)
      if (idx[a] < K || idx[a] > N - 1 - K) { fits = false; break; }
    if (!fits) continue;
    std::fill(acc.begin(), acc.end(), 0.0);
    const double* base = f.samples.data() + p * C;
    for (const Tap& t : taps) {
      const double* s = base + t.off * C;
      for (int c = 0; c < C; ++c) acc[c] += t.w * s[c];
    }
    double* d = out.samples.data() + p * C;
    for (int c = 0; c < C; ++c) d[c] = acc[c];
  }
  return out;
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int n = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    if (y[i] <= 0.0 || x[i] <= 0.0) continue;
    double lx = std::log(x[i]), ly = std::log(y[i]);
    sx += lx; sy += ly; sxx += lx * lx; sxy += lx * ly;
    ++n;
  }
  if (n < 2) return 0.0;
  double den = n * sxx - sx * sx;
  if (den == 0.0) return 0.0;
  return (n * sxy - sx * sy) / den;
}

bool MollificationRates::pass(double tol) const {
  return std::abs(i.order - double(-s)) <= tol && std::abs(ii.order - 2.0) <= tol &&
         std::abs(iii.order - (2.0 * alpha - r)) <= tol && std::abs(iv.order - 1.0) <= tol;
}

MollificationRates verify_mollification_rates(const GridField& f, const GridField& g,
                                              const std::vector<double>& ell_list, int r,
                                              double alpha, int s) {
  if (ell_list.size() < 3)
    throw Error(ErrorCode::insufficient_data, "verify_mollification_rates: need >= 3 scales");
  for (size_t i = 1; i < ell_list.size(); ++i)
    if (!(ell_list[i] < ell_list[i - 1]))
      throw Error(ErrorCode::config, "verify_mollification_rates: ell_list must decrease");
  if (f.components != 1 || g.components != 1)
    throw Error(ErrorCode::config, "verify_mollification_rates: scalar fields expected");

  MollificationRates out;
  out.r = r;
  out.s = s;
  out.alpha = alpha;

  GridField fg = f;
  for (size_t i = 0; i < fg.samples.size(); ++i) fg.samples[i] = f.samples[i] * g.samples[i];

  // All scales are measured over the common domain left by the largest one,
  // otherwise the nested sups distort the fitted slopes.
  const double common_radius = f.grid.radius - ell_list.front();
  auto top_seminorm = [&](GridField u, int order) {
    u.grid.radius = std::min(u.grid.radius, common_radius);
    double m = 0.0;
    for (const auto& d : derivatives_of_order(u, order)) m = std::max(m, sup_norm(d));
    return m;
  };

  for (double ell : ell_list) {
    GridField fl = mollify(f, ell);
    GridField gl = mollify(g, ell);
    GridField fgl = mollify(fg, ell);

    out.i.lhs.push_back(top_seminorm(fl, r + s));

    GridField diff = axpby(1.0, f, -1.0, fl);
    out.ii.lhs.push_back(top_seminorm(diff, r));
    out.iv.lhs.push_back(top_seminorm(diff, 0));

    GridField prod = fl;
    for (size_t i = 0; i < prod.samples.size(); ++i) prod.samples[i] = fl.samples[i] * gl.samples[i];
    prod.grid.radius = std::min(fl.grid.radius, gl.grid.radius);
    GridField comm = axpby(1.0, fgl, -1.0, prod);
    out.iii.lhs.push_back(top_seminorm(comm, r));
  }

  std::vector<double> ells(ell_list.begin(), ell_list.end());
  out.i.order = loglog_slope(ells, out.i.lhs);
  out.ii.order = loglog_slope(ells, out.ii.lhs);
  out.iii.order = loglog_slope(ells, out.iii.lhs);
  out.iv.order = loglog_slope(ells, out.iv.lhs);
  return out;
}

}  // namespace isolab
