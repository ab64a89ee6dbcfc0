#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "neso/error.hpp"
#include "neso/spline_basis.hpp"

using namespace neso;

namespace {

KnotVector random_knots(std::mt19937_64& rng, int count, int order) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> interior(count - order - 1);
  for (auto& k : interior) k = u(rng);
  std::sort(interior.begin(), interior.end());
  std::vector<double> knots(order + 1, 0.0);
  knots.insert(knots.end(), interior.begin(), interior.end());
  knots.insert(knots.end(), order + 1, 1.0);
  return KnotVector(knots, order);
}

// Central difference of the (p-1)-th derivative vector; p-1 == 0 uses eval_all.
std::vector<double> fd_derivative(const KnotVector& kv, int p, double u, double h) {
  auto lower = [&](double x) {
    return p == 1 ? eval_all(kv, x) : eval_derivative(kv, p - 1, x);
  };
  const auto a = lower(u + h);
  const auto b = lower(u - h);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = (a[i] - b[i]) / (2 * h);
  return out;
}

// Stays off knots so the piecewise polynomial is smooth across the FD stencil.
double safe_point(const KnotVector& kv, std::mt19937_64& rng, double h) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (;;) {
    const double x = u(rng);
    bool ok = x > 3 * h && x < 1 - 3 * h;
    for (double k : kv.knots()) ok = ok && std::abs(k - x) > 3 * h;
    if (ok) return x;
  }
}

}  // namespace

TEST_CASE("make_knots: clamped, equispaced interior") {
  CHECK(make_knots(3, 2).knots().size() == 6);
  const auto k3 = make_knots(3, 2);
  CHECK(std::vector<double>(k3.knots().begin(), k3.knots().end()) ==
        std::vector<double>{0, 0, 0, 1, 1, 1});
  const auto k4 = make_knots(4, 2);
  CHECK(std::vector<double>(k4.knots().begin(), k4.knots().end()) ==
        std::vector<double>{0, 0, 0, 0.5, 1, 1, 1});
  CHECK(make_knots(10, 3).count() == 10);
}

TEST_CASE("make_knots: too few control points") {
  try {
    make_knots(2, 2);
    FAIL("expected invalid-spec");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InvalidSpec);
    CHECK(e.tag() == "invalid-spec");
  }
  CHECK_THROWS_AS(make_knots(4, 2, Interval{1.0, 1.0}), Error);
}

TEST_CASE("KnotVector rejects unclamped or unsorted knots") {
  CHECK_THROWS_AS(KnotVector({0, 0, 0.5, 1, 1, 1}, 2), Error);
  CHECK_THROWS_AS(KnotVector({0, 0, 0, 0.7, 0.3, 1, 1, 1}, 2), Error);
}

TEST_CASE("eval_all: Bernstein closed forms") {
  const auto kv = make_knots(3, 2);
  for (double x : {0.0, 0.2, 0.5, 0.77, 1.0}) {
    const auto b = eval_all(kv, x);
    CHECK(b[0] == doctest::Approx((1 - x) * (1 - x)).epsilon(1e-15));
    CHECK(b[1] == doctest::Approx(2 * x * (1 - x)).epsilon(1e-15));
    CHECK(b[2] == doctest::Approx(x * x).epsilon(1e-15));
  }
  const auto b = eval_all(kv, 0.5);
  CHECK(b[0] == 0.25);
  CHECK(b[1] == 0.5);
  CHECK(b[2] == 0.25);
}

TEST_CASE("eval_all: order 0 is the span indicator") {
  const auto kv = make_knots(4, 0);  // knots 0, .25, .5, .75, 1
  const auto b = eval_all(kv, 0.3);
  CHECK(b == std::vector<double>{0, 1, 0, 0});
  CHECK(eval_all(kv, 0.5) == std::vector<double>{0, 0, 1, 0});
  CHECK(eval_all(kv, 1.0) == std::vector<double>{0, 0, 0, 1});
}

TEST_CASE("eval_all: endpoint interpolation and right-endpoint limit") {
  for (int d : {1, 2, 3, 4}) {
    const auto kv = make_knots(d + 5, d);
    const auto b0 = eval_all(kv, 0.0);
    const auto b1 = eval_all(kv, 1.0);
    CHECK(b0.front() == 1.0);
    CHECK(b1.back() == 1.0);
    CHECK(std::accumulate(b0.begin(), b0.end(), 0.0) == 1.0);
    CHECK(std::accumulate(b1.begin(), b1.end(), 0.0) == 1.0);
  }
}

TEST_CASE("eval_all: partition of unity, local support, range") {
  for (int d : {0, 1, 2, 3, 4, 5}) {
    const auto kv = make_knots(d + 7, d);
    for (int i = 0; i < 1000; ++i) {
      const double x = i / 999.0;
      const auto b = eval_all(kv, x);
      double sum = 0.0;
      int nonzero = 0;
      for (double v : b) {
        sum += v;
        nonzero += v != 0.0;
        CHECK(v >= 0.0);
        CHECK(v <= 1.0 + 1e-15);
      }
      CHECK(std::abs(sum - 1.0) < 1e-12);
      CHECK(nonzero <= d + 1);
    }
  }
}

TEST_CASE("eval_all: repeated interior knots stay total") {
  const KnotVector kv({0, 0, 0, 0.5, 0.5, 1, 1, 1}, 2);
  for (double x : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    const auto b = eval_all(kv, x);
    CHECK(std::abs(std::accumulate(b.begin(), b.end(), 0.0) - 1.0) < 1e-14);
    const auto d = eval_derivative(kv, 1, x);
    for (double v : d) CHECK(std::isfinite(v));
  }
}

TEST_CASE("eval_all: domain errors") {
  const auto kv = make_knots(5, 3);
  CHECK_THROWS_AS(eval_all(kv, -1e-9), Error);
  CHECK_THROWS_AS(eval_all(kv, 1.0 + 1e-9), Error);
  try {
    eval_all(kv, 2.0);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Domain);
  }
}

TEST_CASE("eval_derivative: Bernstein derivatives") {
  const auto kv = make_knots(3, 2);
  const auto d = eval_derivative(kv, 1, 0.5);
  CHECK(d[0] == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(std::abs(d[1]) < 1e-15);
  CHECK(d[2] == doctest::Approx(1.0).epsilon(1e-15));
  const auto d2 = eval_derivative(kv, 2, 0.3);
  CHECK(d2[0] == doctest::Approx(2.0));
  CHECK(d2[1] == doctest::Approx(-4.0));
  CHECK(d2[2] == doctest::Approx(2.0));
}

TEST_CASE("eval_derivative: order checks") {
  const auto kv = make_knots(5, 2);
  try {
    eval_derivative(kv, 3, 0.5);
    FAIL("expected invalid-order");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InvalidOrder);
  }
  CHECK_THROWS_AS(eval_derivative(kv, 0, 0.5), Error);
  CHECK_THROWS_AS(eval_derivative(kv, 1, 1.5), Error);
}

TEST_CASE("eval_derivative: first derivatives sum to zero") {
  const auto kv = make_knots(9, 3);
  for (int i = 0; i <= 100; ++i) {
    const auto d = eval_derivative(kv, 1, i / 100.0);
    CHECK(std::abs(std::accumulate(d.begin(), d.end(), 0.0)) < 1e-11);
  }
}

TEST_CASE("eval_derivative matches central differences on random knot vectors") {
  std::mt19937_64 rng(7);
  const double h = 1e-6;
  for (int d : {2, 3, 4}) {
    for (int p : {1, 2}) {
      for (int trial = 0; trial < 20; ++trial) {
        const auto kv = random_knots(rng, d + 6, d);
        const double x = safe_point(kv, rng, h);
        const auto exact = eval_derivative(kv, p, x);
        const auto fd = fd_derivative(kv, p, x, h);
        double scale = 0.0;
        for (double v : exact) scale = std::max(scale, std::abs(v));
        for (std::size_t i = 0; i < exact.size(); ++i) {
          CHECK(std::abs(exact[i] - fd[i]) <= 1e-6 * std::max(scale, 1.0));
        }
      }
    }
  }
}

TEST_CASE("rescale: endpoints and jacobian") {
  const auto r = rescale(4.0, {-10.0, 4.0});
  CHECK(r.u == 1.0);
  CHECK(r.jacobian == doctest::Approx(1.0 / 14.0));
  const auto r0 = rescale(-10.0, {-10.0, 4.0});
  CHECK(r0.u == 0.0);
  CHECK_THROWS_AS(rescale(4.5, {-10.0, 4.0}), Error);
  CHECK_THROWS_AS(rescale(-10.5, {-10.0, 4.0}), Error);
}

TEST_CASE("rescale: physical derivatives follow the chain rule") {
  const Interval dom{-3.0, 5.0};
  const auto kv = make_knots(8, 3);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> c(-1.0, 1.0);
  std::vector<double> coef(kv.count());
  for (auto& v : coef) v = c(rng);
  auto value = [&](double x) {
    const auto b = eval_all(kv, rescale(x, dom).u);
    return std::inner_product(b.begin(), b.end(), coef.begin(), 0.0);
  };
  const double x = 1.3;
  const double h = 1e-5;
  const auto r = rescale(x, dom);
  const auto d1 = eval_derivative(kv, 1, r.u);
  const auto d2 = eval_derivative(kv, 2, r.u);
  const double g1 = std::inner_product(d1.begin(), d1.end(), coef.begin(), 0.0) * r.jacobian;
  const double g2 =
      std::inner_product(d2.begin(), d2.end(), coef.begin(), 0.0) * r.jacobian * r.jacobian;
  CHECK(g1 == doctest::Approx((value(x + h) - value(x - h)) / (2 * h)).epsilon(1e-7));
  CHECK(g2 == doctest::Approx((value(x + h) - 2 * value(x) + value(x - h)) / (h * h))
                  .epsilon(1e-4));
}

TEST_CASE("greville abscissae") {
  const auto kv = make_knots(4, 2);  // 0 0 0 .5 1 1 1
  const auto g = kv.greville();
  CHECK(g == std::vector<double>{0.0, 0.25, 0.75, 1.0});
}
