#pragma once

// Stochastic systems dx = f(x, t) dt + sigma dW with box safe sets, their
// Monte Carlo estimators, and the closed-form recovery probability of the
// scalar sine family.

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <variant>
#include <vector>

#include "neso/spline_basis.hpp"
#include "neso/surrogate.hpp"

namespace neso {

/// f(t) = a1 sin(2 pi w1 t / 10 + psi1) + a2 sin(2 pi w2 t / 10 + psi2).
struct SineDrift {
  double a1 = 0.0, a2 = 0.0;
  double w1 = 1.0, w2 = 1.0;
  double psi1 = 0.0, psi2 = 0.0;

  double operator()(double t) const noexcept;
  double derivative(double t) const noexcept;
};

struct ConstantDrift {
  std::vector<double> value;
};

/// f(x) = H x.
struct LinearDrift {
  Eigen::MatrixXd h;
};

/// Decoupled mode of the multi-agent network: f(p, v) = (v, -gamma p - beta2 v).
struct ModeDrift {
  double gamma = 1.0;
  double beta2 = 1.0;
};

using Drift = std::variant<SineDrift, ConstantDrift, LinearDrift, ModeDrift>;

struct SystemSpec {
  Drift drift;
  std::vector<double> sigma;  // diagonal noise magnitude per state dimension
  /// Safe set: a box over the checked coordinates (projection * x, or x when
  /// the projection is empty). Bounds may be infinite.
  std::vector<Interval> safe_box;
  Eigen::MatrixXd projection;
  /// State box covered by the PDE grid and the spline surrogate.
  std::vector<Interval> domain;
  ProblemKind kind = ProblemKind::Safety;

  std::size_t dims() const noexcept { return sigma.size(); }
  void drift_at(std::span<const double> x, double t, std::span<double> out) const;
  /// Closed-box membership of the checked coordinates.
  bool in_safe_set(std::span<const double> x) const;
  /// Strict interior of the safe box.
  bool in_safe_interior(std::span<const double> x) const;
  /// Faces of `domain` that lie on the safe-set boundary take the boundary
  /// value; the rest are far-field truncations.
  Icbc icbc() const;
  /// Throws invalid-system if the spec is inconsistent.
  void validate() const;
};

/// Scalar recovery problem of the sine family: safe set x >= alpha, computed
/// on [-10, alpha] x [0, 10].
SystemSpec sine_recovery_system(const SineDrift& drift, double sigma = 1.0, double alpha = 4.0);

/// 2-D mode safety problem on the box [-alpha, alpha]^2.
SystemSpec mode_safety_system(double gamma, double beta2, double sigma, double alpha);

/// a1, a2 ~ U(-1, 1); w1, w2 ~ U(0.5, 2); psi1, psi2 ~ U(0, 2 pi); a2 = 0 with
/// probability 1/2. Deterministic per seed.
SineDrift random_sine_drift(std::uint64_t seed);
SystemSpec random_sine_dynamics(std::uint64_t seed);

/// S(t) = int_0^t f, closed form.
double integrated_drift(const SineDrift& f, double t);
/// Composite trapezoid reference for integrated_drift, with the
/// Euler-Maclaurin end correction -h^2/12 (f'(t) - f'(0)).
double integrated_drift_quadrature(const SineDrift& f, double t, int panels = 2048);

/// P(the path started at x < alpha reaches alpha within t) under the
/// first-passage density with integrated drift S, by composite trapezoid on
/// (0, t]. The tau = 0 endpoint contributes 0. Returns 1 for x >= alpha.
double recovery_truth(const SineDrift& f, double x, double t, int panels = 4096,
                      double alpha = 4.0, double sigma = 1.0);

struct McResult {
  double estimate = 0.0;
  double stderr_ = 0.0;
  std::int64_t trajectories = 0;
  double dt = 0.0;
  std::int64_t successes = 0;
};

/// Euler-Maruyama estimate of the safety (never leaves the open box at any
/// step, including t = 0) or recovery (enters the closed box at some step,
/// including t = 0) probability. horizon / dt is rounded to whole steps.
McResult mc_estimate(const SystemSpec& spec, std::span<const double> x0, double horizon,
                     std::int64_t trajectories, double dt, std::uint64_t seed);

/// The same paths checked at nested horizons; results are monotone in the
/// horizon and entry i equals mc_estimate(..., horizons[i], ...).
std::vector<McResult> mc_curve(const SystemSpec& spec, std::span<const double> x0,
                               std::span<const double> horizons, std::int64_t trajectories,
                               double dt, std::uint64_t seed);

/// Seed of the independent substream of trajectory `index`.
std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t index) noexcept;

/// Single path sampled at every step, for diagnostics: (steps + 1) x dims.
std::vector<std::vector<double>> simulate_path(const SystemSpec& spec, std::span<const double> x0,
                                               double horizon, double dt, std::uint64_t seed);

}  // namespace neso
