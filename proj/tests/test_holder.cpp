#include <doctest.h>

#include <cmath>
#include <functional>

#include "isolab/bench.hpp"
#include "isolab/holder.hpp"

using namespace isolab;

namespace {

GridField sample(const GridSpec& g, const std::function<double(double, double)>& fn) {
  GridField f = make_scalar(g);
  const long long total = g.num_points();
  for (long long p = 0; p < total; ++p) {
    auto idx = unflatten(g, p);
    f.at(p, 0) = fn(g.coord(0, idx[0]), g.coord(1, idx[1]));
  }
  return f;
}

}  // namespace

TEST_SUITE("holder") {

TEST_CASE("constant field: sup only, zero seminorm") {
  GridSpec g = make_grid(2, 65, 1.0);
  GridField f = sample(g, [](double, double) { return 5.0; });
  for (double alpha : {0.3, 1.0}) {
    HolderEstimate e = holder_norm(f, 0, alpha);
    CHECK(e.sup_part == doctest::Approx(5.0));
    CHECK(e.semi_part == doctest::Approx(0.0));
    CHECK(e.value == doctest::Approx(5.0));
  }
}

TEST_CASE("alpha outside (0,1] is a domain error") {
  GridSpec g = make_grid(2, 33, 1.0);
  GridField f = sample(g, [](double x, double) { return x; });
  CHECK_THROWS_AS(holder_norm(f, 0, 0.0), Error);
  CHECK_THROWS_AS(holder_norm(f, 0, 1.5), Error);
}

TEST_CASE("Lipschitz seminorm of a cone is close to one") {
  GridSpec g = make_grid(2, 129, 1.0);
  GridField f = sample(g, [](double x, double y) { return std::hypot(x - 0.11, y + 0.07); });
  HolderEstimate e = holder_norm(f, 0, 1.0);
  CHECK(e.semi_part >= 0.9);
  CHECK(e.semi_part <= 1.0 + 1e-9);
}

TEST_CASE("sin(lambda x): estimate below min(2, C lambda^alpha) and tracks lambda") {
  GridSpec g = make_grid(2, 257, 1.0);
  for (double lam : {20.0, 40.0}) {
    GridField f = sample(g, [lam](double x, double) { return std::sin(lam * x); });
    CHECK(lam * g.spacing <= 0.35);
    HolderEstimate e1 = holder_norm(f, 0, 1.0);
    CHECK(e1.semi_part / lam <= 1.0 + 1e-9);   // the true Lipschitz constant is lambda
    CHECK(e1.semi_part / lam >= 0.9);          // within 10% when well resolved
    HolderEstimate eh = holder_norm(f, 0, 0.5);
    // modulus bound: [f]_alpha <= sup_d min(2, lambda d)/d^alpha = sqrt(2 lambda)
    CHECK(eh.semi_part <= std::sqrt(2.0 * lam) * (1.0 + 1e-9));
    CHECK(eh.value <= 1.0 + std::sqrt(2.0 * lam) * (1.0 + 1e-9));
  }
}

TEST_CASE("seminorm estimate is monotone in the pair budget") {
  GridSpec g = make_grid(2, 129, 1.0);
  Rng rng(7);
  GridField f = make_band_limited(g, rng, 3.0, 25.0, 9, 1.0);
  double prev = 0.0;
  for (long long budget : {2000LL, 20000LL, 200000LL, 2000000LL}) {
    HolderEstimate e = holder_norm(f, 0, 0.7, budget);
    CHECK(e.semi_part >= prev - 1e-15);
    prev = e.semi_part;
  }
}

TEST_CASE("difference quotients grow with alpha on sub-unit separations") {
  // With all separations d <= radius/2 < 1 the d^alpha weight shrinks as
  // alpha grows, so the estimate is monotone nondecreasing in alpha.
  GridSpec g = make_grid(2, 129, 1.0);
  Rng rng(11);
  GridField f = make_band_limited(g, rng, 2.0, 15.0, 7, 1.0);
  double scale = sup_norm(f);
  for (auto& s : f.samples) s /= (2.0 * scale);  // sup norm 1/2
  double prev = 0.0;
  for (double alpha : {0.2, 0.4, 0.6, 0.8, 1.0}) {
    HolderEstimate e = holder_norm(f, 0, alpha);
    CHECK(e.value >= prev - 1e-12);
    prev = e.value;
  }
}

TEST_CASE("interpolation inequality holds with 5% slack") {
  GridSpec g = make_grid(2, 129, 1.0);
  SUBCASE("constant") {
    GridField f = sample(g, [](double, double) { return 3.0; });
    auto r = interpolation_check(f, 0.0, 1.0, 0.5);
    CHECK(r.pass);
    CHECK(r.lhs == doctest::Approx(r.rhs));
  }
  SUBCASE("oscillatory") {
    GridField f = sample(g, [](double x, double) { return std::sin(20.0 * x); });
    auto r = interpolation_check(f, 0.0, 1.0, 0.5);
    CHECK(r.pass);
    CHECK(r.lhs <= r.endpoint_factor * r.rhs * (1.0 + 1e-9));
    auto ri = interpolation_check(f, 0.25, 1.0, 0.5);  // interior: constant one
    CHECK(ri.endpoint_factor == 1.0);
    CHECK(ri.pass);
  }
  SUBCASE("random band-limited corpus") {
    Rng rng(123);
    int pass = 0;
    const int trials = 100;
    for (int t = 0; t < trials; ++t) {
      GridField f = make_band_limited(g, rng, 2.0, 30.0, 8, 1.0 + rng.uniform());
      double lam = 0.25 + 0.5 * rng.uniform();
      auto r = interpolation_check(f, 0.0, 1.0, lam, 200000);
      if (r.pass) ++pass;
    }
    CHECK(pass == trials);
  }
}

TEST_CASE("estimate dominates the sup part") {
  GridSpec g = make_grid(2, 65, 1.0);
  GridField f = sample(g, [](double x, double y) { return std::sin(5 * x) * std::cos(3 * y); });
  HolderEstimate e = holder_norm(f, 1, 0.5);
  CHECK(e.value >= e.sup_part);
  CHECK(e.value >= cr_norm(f, 1) - 1e-12);
}

}  // TEST_SUITE
