#include <doctest.h>

#include <cmath>
#include <numbers>

#include "neso/error.hpp"
#include "neso/stochastic_oracle.hpp"

using namespace neso;

namespace {

// 2 (1 - Phi(d / sqrt(t))): drift-free first passage to a level d away.
double reflection(double d, double t) { return std::erfc(d / std::sqrt(2.0 * t)); }

SystemSpec drift_free_recovery() { return sine_recovery_system(SineDrift{}); }

}  // namespace

TEST_CASE("random_sine_drift: ranges, determinism, coin") {
  int zero = 0;
  for (std::uint64_t s = 0; s < 10000; ++s) {
    const auto f = random_sine_drift(s);
    CHECK(f.a1 >= -1.0);
    CHECK(f.a1 < 1.0);
    CHECK(f.a2 >= -1.0);
    CHECK(f.a2 < 1.0);
    CHECK(f.w1 >= 0.5);
    CHECK(f.w1 < 2.0);
    CHECK(f.w2 >= 0.5);
    CHECK(f.w2 < 2.0);
    CHECK(f.psi1 >= 0.0);
    CHECK(f.psi1 < 2 * std::numbers::pi);
    CHECK(f.psi2 >= 0.0);
    CHECK(f.psi2 < 2 * std::numbers::pi);
    zero += f.a2 == 0.0;
  }
  CHECK(std::abs(zero / 10000.0 - 0.5) <= 0.02);
  const auto a = random_sine_drift(42);
  const auto b = random_sine_drift(42);
  CHECK(a.a1 == b.a1);
  CHECK(a.psi2 == b.psi2);
  CHECK(random_sine_drift(43).a1 != a.a1);
}

TEST_CASE("random_sine_dynamics: case-1 system layout") {
  const auto s = random_sine_dynamics(1);
  CHECK(s.kind == ProblemKind::Recovery);
  CHECK(s.domain[0].lo == -10.0);
  CHECK(s.domain[0].hi == 4.0);
  CHECK(s.sigma[0] == 1.0);
  const auto icbc = s.icbc();
  CHECK(icbc.faces[0][0] == FaceCondition::FarField);
  CHECK(icbc.faces[0][1] == FaceCondition::Boundary);
  CHECK_NOTHROW(s.validate());
}

TEST_CASE("integrated_drift: closed form vs trapezoid") {
  CHECK(integrated_drift(random_sine_drift(3), 0.0) == 0.0);
  SineDrift one{0.7, 0.0, 1.3, 1.0, 0.4, 0.0};
  const double t = 6.1;
  const double k = 2 * std::numbers::pi * 1.3 / 10;
  const double expected = -(0.7 / k) * (std::cos(k * t + 0.4) - std::cos(0.4));
  CHECK(std::abs(integrated_drift(one, t) - expected) < 1e-14);
  CHECK(std::abs(integrated_drift_quadrature(one, t) - expected) < 1e-8);
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto f = random_sine_drift(s);
    const double tt = 10.0 * (s + 0.5) / 100.0;
    CHECK(std::abs(integrated_drift(f, tt) - integrated_drift_quadrature(f, tt)) < 1e-8);
  }
}

TEST_CASE("recovery_truth: drift-free reflection principle") {
  const SineDrift none{};
  const double exact = reflection(1.0, 1.0);
  CHECK(exact == doctest::Approx(0.317310507862914).epsilon(1e-12));
  CHECK(std::abs(recovery_truth(none, 3.0, 1.0) - exact) < 1e-4);
  for (double x : {-8.0, -2.0, 1.0, 3.5}) {
    for (double t : {0.5, 2.0, 10.0}) {
      CHECK(std::abs(recovery_truth(none, x, t) - reflection(4.0 - x, t)) < 1e-3);
    }
  }
}

TEST_CASE("recovery_truth: IC, BC, monotonicity, panel doubling") {
  const auto f = random_sine_drift(11);
  CHECK(recovery_truth(f, 1.0, 0.0) == 0.0);
  CHECK(recovery_truth(f, 4.0, 3.0) == 1.0);
  CHECK(recovery_truth(f, 5.0, 3.0) == 1.0);
  for (double x : {-9.0, -3.0, 2.0, 3.9}) {
    double prev = 0.0;
    for (int i = 1; i <= 50; ++i) {
      const double v = recovery_truth(f, x, 0.2 * i);
      CHECK(v >= prev - 1e-15);
      CHECK(v <= 1.0);
      prev = v;
    }
    const double a = recovery_truth(f, x, 7.0, 2048);
    const double b = recovery_truth(f, x, 7.0, 4096);
    const double c = recovery_truth(f, x, 7.0, 8192);
    CHECK(std::abs(c - b) <= std::abs(b - a) + 1e-12);
  }
}

TEST_CASE("mc_estimate: boundary and horizon conventions") {
  const auto rec = drift_free_recovery();
  const std::vector<double> on{4.0};
  CHECK(mc_estimate(rec, on, 1.0, 100, 1e-2, 1).estimate == 1.0);
  const auto safe = mode_safety_system(2.0, 1.0, 0.2, 1.0);
  const std::vector<double> edge{1.0, 0.0};
  CHECK(mc_estimate(safe, edge, 1.0, 100, 1e-2, 1).estimate == 0.0);
  const std::vector<double> inside{0.2, 0.1};
  CHECK(mc_estimate(safe, inside, 0.0, 100, 1e-2, 1).estimate == 1.0);
  const std::vector<double> below{3.0};
  CHECK(mc_estimate(rec, below, 0.0, 100, 1e-2, 1).estimate == 0.0);
}

TEST_CASE("mc_estimate: drift-free recovery matches reflection") {
  const auto r = mc_estimate(drift_free_recovery(), std::vector<double>{3.0}, 1.0, 10000, 1e-3, 2024);
  CHECK(r.trajectories == 10000);
  CHECK(r.stderr_ == doctest::Approx(std::sqrt(r.estimate * (1 - r.estimate) / 10000)));
  CHECK(std::abs(r.estimate - 0.317310507862914) <= 3 * r.stderr_);
}

TEST_CASE("mc_curve: nested horizons are monotone and match single estimates") {
  const auto rec = drift_free_recovery();
  const std::vector<double> hs{0.5, 1.0, 2.0, 4.0};
  const std::vector<double> x0{2.5};
  const auto curve = mc_curve(rec, x0, hs, 2000, 1e-2, 5);
  for (std::size_t i = 1; i < curve.size(); ++i) CHECK(curve[i].estimate >= curve[i - 1].estimate);
  CHECK(mc_estimate(rec, x0, 2.0, 2000, 1e-2, 5).successes == curve[2].successes);

  const auto safe = mode_safety_system(3.0, 1.0, 0.2, 0.5);
  const std::vector<double> y0{0.1, 0.0};
  const auto sc = mc_curve(safe, y0, hs, 2000, 1e-2, 5);
  for (std::size_t i = 1; i < sc.size(); ++i) CHECK(sc[i].estimate <= sc[i - 1].estimate);
}

TEST_CASE("mc_estimate is bit-reproducible per seed") {
  const auto s = mode_safety_system(2.0, 0.8, 0.2, 0.6);
  const std::vector<double> x0{0.0, 0.0};
  const auto a = mc_estimate(s, x0, 3.0, 3000, 1e-2, 77);
  const auto b = mc_estimate(s, x0, 3.0, 3000, 1e-2, 77);
  CHECK(a.successes == b.successes);
  CHECK(a.estimate == b.estimate);
  CHECK(substream_seed(77, 0) != substream_seed(77, 1));
}

TEST_CASE("Euler-Maruyama: deterministic limits") {
  SystemSpec still;
  still.drift = ConstantDrift{{0.0}};
  still.sigma = {0.0};
  still.safe_box = {{-100.0, 100.0}};
  still.domain = still.safe_box;
  const auto p = simulate_path(still, std::vector<double>{1.5}, 2.0, 1e-3, 1);
  for (const auto& x : p) CHECK(x[0] == 1.5);

  SystemSpec drift = still;
  drift.drift = ConstantDrift{{1.0}};
  const auto q = simulate_path(drift, std::vector<double>{1.5}, 2.0, 1e-3, 1);
  CHECK(q.size() == 2001);
  CHECK(std::abs(q.back()[0] - 3.5) <= 1e-9);
}

TEST_CASE("Euler-Maruyama: increment variance is sigma^2 dt") {
  SystemSpec s;
  s.drift = ConstantDrift{{0.0}};
  s.sigma = {0.7};
  s.safe_box = {{-1e9, 1e9}};
  s.domain = s.safe_box;
  const double dt = 1e-2;
  const auto path = simulate_path(s, std::vector<double>{0.0}, 1000.0, dt, 9);
  double m = 0.0, v = 0.0;
  const std::size_t n = path.size() - 1;
  for (std::size_t i = 0; i < n; ++i) m += path[i + 1][0] - path[i][0];
  m /= n;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = path[i + 1][0] - path[i][0] - m;
    v += d * d;
  }
  v /= n - 1;
  CHECK(n == 100000);
  CHECK(std::abs(v / (0.49 * dt) - 1.0) < 0.05);
}

TEST_CASE("SystemSpec validation") {
  auto s = mode_safety_system(1.0, 1.0, 0.2, 1.0);
  s.sigma = {0.2, -0.1};
  try {
    s.validate();
    FAIL("expected invalid-system");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InvalidSystem);
  }
  CHECK_THROWS_AS(mode_safety_system(1.0, 1.0, 0.2, 0.0), Error);
  auto t = drift_free_recovery();
  t.sigma = {1.0, 1.0};
  CHECK_THROWS_AS(t.validate(), Error);
}
