#include "isolab/holder.hpp"

#include <cmath>

namespace isolab {

std::vector<GridField> derivatives_of_order(const GridField& f, int k) {
  std::vector<GridField> cur;
  cur.push_back(f);
  // Multi-indices generated as nondecreasing axis sequences to avoid duplicates
  // (mixed partials commute for our stencils up to round-off; we keep each once).
  std::vector<std::vector<int>> tags{{}};
  for (int step = 0; step < k; ++step) {
    std::vector<GridField> next;
    std::vector<std::vector<int>> ntags;
    for (size_t i = 0; i < cur.size(); ++i) {
      int first = tags[i].empty() ? 0 : tags[i].back();
      for (int a = first; a < f.grid.n; ++a) {
        next.push_back(partial(cur[i], a));
        auto t = tags[i];
        t.push_back(a);
        ntags.push_back(std::move(t));
      }
    }
    cur = std::move(next);
    tags = std::move(ntags);
  }
  return cur;
}

namespace {

// Separation directions in cell units: axes first, then +/- diagonals.
std::vector<std::array<int, 3>> pair_directions(int n) {
  std::vector<std::array<int, 3>> d;
  for (int a = 0; a < n; ++a) {
    std::array<int, 3> e{0, 0, 0};
    e[a] = 1;
    d.push_back(e);
  }
  if (n >= 2) {
    d.push_back({1, 1, 0});
    d.push_back({1, -1, 0});
  }
  if (n == 3) {
    d.push_back({1, 0, 1});
    d.push_back({0, 1, 1});
    d.push_back({1, 1, 1});
    d.push_back({1, -1, 1});
  }
  return d;
}

// Largest order-k seminorm quotient over sampled pairs. Strides are powers of
// two so that a larger budget always samples a superset of a smaller one.
double seminorm_sample(const std::vector<GridField>& derivs, double alpha,
                       long long pair_budget, long long* pairs_used) {
  if (derivs.empty()) return 0.0;
  const GridSpec& g = derivs[0].grid;
  const double h = g.spacing;
  const int N = g.points_per_axis;

  std::vector<long long> seps;
  for (long long s = 1; s * h <= 0.5 * g.radius + 1e-15; s *= 2) seps.push_back(s);
  if (seps.empty()) seps.push_back(1);

  auto dirs = pair_directions(g.n);
  const long long combos = (long long)derivs.size() * seps.size() * dirs.size();
  const long long per_combo = std::max<long long>(1, pair_budget / std::max<long long>(1, combos));

  double best = 0.0;
  long long used = 0;
  for (const GridField& df : derivs) {
    const int C = df.components;
    for (long long s : seps) {
      for (const auto& dir : dirs) {
        double len = 0.0;
        for (int a = 0; a < g.n; ++a) len += double(dir[a] * dir[a]);
        len = std::sqrt(len) * double(s) * h;
        const double wd = std::pow(len, -alpha);

        long long stride = 1;
        const long long total = g.num_points();
        while (total / stride > per_combo) stride *= 2;

        for (long long p = 0; p < total; p += stride) {
          auto idx = unflatten(g, p);
          std::array<int, 3> idx2 = idx;
          bool in = true;
          for (int a = 0; a < g.n; ++a) {
            idx2[a] = idx[a] + int(s) * dir[a];
            if (idx2[a] < 0 || idx2[a] >= N) { in = false; break; }
          }
          if (!in || !is_valid(g, idx) || !is_valid(g, idx2)) continue;
          long long p2 = flatten(g, idx2);
          const double* u = df.samples.data() + p * C;
          const double* v = df.samples.data() + p2 * C;
          ++used;
          for (int c = 0; c < C; ++c) {
            double q = std::abs(u[c] - v[c]) * wd;
            if (q > best) best = q;
          }
        }
      }
    }
  }
  if (pairs_used) *pairs_used = used;
  return best;
}

}  // namespace

HolderEstimate holder_norm(const GridField& f, int k, double alpha, long long pair_budget) {
  if (!(alpha > 0.0 && alpha <= 1.0))
    throw Error(ErrorCode::domain, "holder_norm: alpha must lie in (0,1]");
  HolderEstimate e;
  e.k = k;
  e.alpha = alpha;
  e.pair_budget = pair_budget;

  std::vector<GridField> top;
  for (int r = 0; r <= k; ++r) {
    auto d = derivatives_of_order(f, r);
    for (const auto& df : d) e.sup_part = std::max(e.sup_part, sup_norm(df));
    if (r == k) top = std::move(d);
  }
  e.semi_part = seminorm_sample(top, alpha, pair_budget, &e.pairs_used);
  e.value = e.sup_part + e.semi_part;
  return e;
}

double cr_norm(const GridField& f, int r) {
  double m = 0.0;
  for (int j = 0; j <= r; ++j)
    for (const auto& df : derivatives_of_order(f, j)) m = std::max(m, sup_norm(df));
  return m;
}

double holder_norm_frac(const GridField& f, double a, long long pair_budget) {
  if (a < 0.0) throw Error(ErrorCode::domain, "holder_norm_frac: negative order");
  if (a == 0.0) return sup_norm(f);
  int k = int(std::ceil(a)) - 1;
  double alpha = a - k;
  return holder_norm(f, k, alpha, pair_budget).value;
}

InterpolationReport interpolation_check(const GridField& f, double a1, double a2, double lam,
                                        long long pair_budget) {
  if (!(a1 < a2) || !(lam > 0.0 && lam < 1.0))
    throw Error(ErrorCode::config, "interpolation_check: need a1 < a2 and lam in (0,1)");
  InterpolationReport r;
  r.alpha = lam * a1 + (1.0 - lam) * a2;
  r.lhs = holder_norm_frac(f, r.alpha, pair_budget);
  double n1 = holder_norm_frac(f, a1, pair_budget);
  double n2 = holder_norm_frac(f, a2, pair_budget);
  r.rhs = std::pow(n1, lam) * std::pow(n2, 1.0 - lam);
  r.endpoint_factor = (a1 == 0.0) ? std::pow(2.0, 2.0 * lam) : 1.0;
  r.pass = r.lhs <= 1.05 * r.endpoint_factor * r.rhs;
  return r;
}

}  // namespace isolab
