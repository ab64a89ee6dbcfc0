#include "neso/stochastic_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

#include "neso/error.hpp"

namespace neso {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kInf = std::numeric_limits<double>::infinity();

std::uint64_t splitmix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Drift evaluators with the variant dispatch hoisted out of the time loop.
struct SineEval {
  const SineDrift& f;
  void operator()(const double*, double t, double* out) const { out[0] = f(t); }
};
struct ConstantEval {
  const ConstantDrift& f;
  void operator()(const double*, double, double* out) const {
    std::copy(f.value.begin(), f.value.end(), out);
  }
};
struct LinearEval {
  const LinearDrift& f;
  void operator()(const double* x, double, double* out) const {
    const Eigen::Index n = f.h.rows();
    Eigen::Map<Eigen::VectorXd>(out, n).noalias() = f.h * Eigen::Map<const Eigen::VectorXd>(x, n);
  }
};
struct ModeEval {
  const ModeDrift& f;
  void operator()(const double* x, double, double* out) const {
    out[0] = x[1];
    out[1] = -f.gamma * x[0] - f.beta2 * x[1];
  }
};

template <typename Fn>
decltype(auto) with_evaluator(const Drift& drift, Fn&& fn) {
  return std::visit(
      [&](const auto& d) -> decltype(auto) {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, SineDrift>) return fn(SineEval{d});
        else if constexpr (std::is_same_v<T, ConstantDrift>) return fn(ConstantEval{d});
        else if constexpr (std::is_same_v<T, LinearDrift>) return fn(LinearEval{d});
        else return fn(ModeEval{d});
      },
      drift);
}

std::size_t drift_dims(const Drift& drift) {
  return std::visit(
      [](const auto& d) -> std::size_t {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, SineDrift>) return 1;
        else if constexpr (std::is_same_v<T, ConstantDrift>) return d.value.size();
        else if constexpr (std::is_same_v<T, LinearDrift>) return static_cast<std::size_t>(d.h.rows());
        else return 2;
      },
      drift);
}

// Checked coordinates y = P x (or x) tested against the box.
class SafeSetCheck {
 public:
  explicit SafeSetCheck(const SystemSpec& spec)
      : box_(spec.safe_box), p_(spec.projection), y_(spec.safe_box.size()) {}

  bool closed(const double* x) {
    const double* y = checked(x);
    for (std::size_t k = 0; k < box_.size(); ++k) {
      if (!(y[k] >= box_[k].lo && y[k] <= box_[k].hi)) return false;
    }
    return true;
  }
  bool open(const double* x) {
    const double* y = checked(x);
    for (std::size_t k = 0; k < box_.size(); ++k) {
      if (!(y[k] > box_[k].lo && y[k] < box_[k].hi)) return false;
    }
    return true;
  }

 private:
  const double* checked(const double* x) {
    if (p_.size() == 0) return x;
    Eigen::Map<Eigen::VectorXd>(y_.data(), p_.rows()).noalias() =
        p_ * Eigen::Map<const Eigen::VectorXd>(x, p_.cols());
    return y_.data();
  }

  const std::vector<Interval>& box_;
  const Eigen::MatrixXd& p_;
  std::vector<double> y_;
};

std::int64_t whole_steps(double horizon, double dt) {
  if (!(horizon >= 0.0)) throw Error(ErrorKind::Configuration, "horizon must be >= 0");
  return static_cast<std::int64_t>(std::llround(horizon / dt));
}

}  // namespace

double SineDrift::operator()(double t) const noexcept {
  return a1 * std::sin(kTwoPi * w1 * t / 10.0 + psi1) + a2 * std::sin(kTwoPi * w2 * t / 10.0 + psi2);
}

double SineDrift::derivative(double t) const noexcept {
  const double k1 = kTwoPi * w1 / 10.0;
  const double k2 = kTwoPi * w2 / 10.0;
  return a1 * k1 * std::cos(k1 * t + psi1) + a2 * k2 * std::cos(k2 * t + psi2);
}

void SystemSpec::drift_at(std::span<const double> x, double t, std::span<double> out) const {
  with_evaluator(drift, [&](const auto& eval) { eval(x.data(), t, out.data()); });
}

bool SystemSpec::in_safe_set(std::span<const double> x) const {
  return SafeSetCheck(*this).closed(x.data());
}

bool SystemSpec::in_safe_interior(std::span<const double> x) const {
  return SafeSetCheck(*this).open(x.data());
}

Icbc SystemSpec::icbc() const {
  Icbc out;
  out.kind = kind;
  for (std::size_t a = 0; a < domain.size(); ++a) {
    std::array<FaceCondition, 2> faces{FaceCondition::Boundary, FaceCondition::Boundary};
    if (projection.size() == 0) {
      const auto& box = safe_box[a];
      for (int side = 0; side < 2; ++side) {
        const double face = side == 0 ? domain[a].lo : domain[a].hi;
        if (face != box.lo && face != box.hi) faces[side] = FaceCondition::FarField;
      }
    }
    out.faces.push_back(faces);
  }
  return out;
}

void SystemSpec::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorKind::InvalidSystem, msg); };
  const std::size_t n = dims();
  if (n == 0) fail("system has no state dimensions");
  for (double s : sigma) {
    if (!(s >= 0.0) || !std::isfinite(s)) fail("sigma entries must be finite and >= 0");
  }
  if (drift_dims(drift) != n) fail("drift dimension does not match sigma");
  if (const auto* lin = std::get_if<LinearDrift>(&drift); lin && lin->h.cols() != lin->h.rows()) {
    fail("linear drift matrix must be square");
  }
  if (domain.size() != n) fail("domain dimension does not match sigma");
  for (const auto& d : domain) {
    if (!(d.hi > d.lo) || !std::isfinite(d.lo) || !std::isfinite(d.hi)) fail("empty or unbounded domain");
  }
  for (const auto& b : safe_box) {
    if (!(b.hi > b.lo)) fail("empty safe box");
  }
  if (projection.size() == 0) {
    if (safe_box.size() != n) fail("safe box dimension does not match the state");
  } else if (static_cast<std::size_t>(projection.rows()) != safe_box.size() ||
             static_cast<std::size_t>(projection.cols()) != n) {
    fail("projection shape does not match safe box and state");
  }
}

SystemSpec sine_recovery_system(const SineDrift& drift, double sigma, double alpha) {
  SystemSpec s;
  s.drift = drift;
  s.sigma = {sigma};
  s.safe_box = {{alpha, kInf}};
  s.domain = {{-10.0, alpha}};
  s.kind = ProblemKind::Recovery;
  return s;
}

SystemSpec mode_safety_system(double gamma, double beta2, double sigma, double alpha) {
  if (!(alpha > 0.0)) throw Error(ErrorKind::InvalidSystem, "mode threshold must be > 0");
  SystemSpec s;
  s.drift = ModeDrift{gamma, beta2};
  s.sigma = {sigma, sigma};
  s.safe_box = {{-alpha, alpha}, {-alpha, alpha}};
  s.domain = s.safe_box;
  s.kind = ProblemKind::Safety;
  return s;
}

SineDrift random_sine_drift(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> amp(-1.0, 1.0);
  std::uniform_real_distribution<double> freq(0.5, 2.0);
  std::uniform_real_distribution<double> phase(0.0, kTwoPi);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  SineDrift f;
  f.a1 = amp(rng);
  f.a2 = amp(rng);
  f.w1 = freq(rng);
  f.w2 = freq(rng);
  f.psi1 = phase(rng);
  f.psi2 = phase(rng);
  if (coin(rng) < 0.5) f.a2 = 0.0;
  return f;
}

SystemSpec random_sine_dynamics(std::uint64_t seed) {
  return sine_recovery_system(random_sine_drift(seed));
}

double integrated_drift(const SineDrift& f, double t) {
  auto term = [t](double a, double w, double psi) {
    if (a == 0.0) return 0.0;
    const double k = kTwoPi * w / 10.0;
    return -(a / k) * (std::cos(k * t + psi) - std::cos(psi));
  };
  return term(f.a1, f.w1, f.psi1) + term(f.a2, f.w2, f.psi2);
}

double integrated_drift_quadrature(const SineDrift& f, double t, int panels) {
  if (t == 0.0) return 0.0;
  const double h = t / panels;
  double sum = 0.5 * (f(0.0) + f(t));
  for (int i = 1; i < panels; ++i) sum += f(i * h);
  return sum * h - h * h / 12.0 * (f.derivative(t) - f.derivative(0.0));
}

double recovery_truth(const SineDrift& f, double x, double t, int panels, double alpha,
                      double sigma) {
  const double d = alpha - x;
  if (d <= 0.0) return 1.0;
  if (t <= 0.0) return 0.0;
  if (panels < 1) throw Error(ErrorKind::Configuration, "panels must be >= 1");
  const double h = t / panels;
  const double s2 = sigma * sigma;
  auto density = [&](double tau) {
    const double r = d - integrated_drift(f, tau);
    return d / (sigma * std::sqrt(kTwoPi * tau * tau * tau)) * std::exp(-r * r / (2.0 * s2 * tau));
  };
  double sum = 0.5 * density(t);
  for (int i = 1; i < panels; ++i) sum += density(i * h);
  return std::clamp(sum * h, 0.0, 1.0);
}

std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t index) noexcept {
  return splitmix64(seed ^ splitmix64(index));
}

std::vector<McResult> mc_curve(const SystemSpec& spec, std::span<const double> x0,
                               std::span<const double> horizons, std::int64_t trajectories,
                               double dt, std::uint64_t seed) {
  spec.validate();
  if (trajectories < 1) throw Error(ErrorKind::Configuration, "need at least one trajectory");
  if (!(dt > 0.0)) throw Error(ErrorKind::Configuration, "dt must be > 0");
  const std::size_t n = spec.dims();
  if (x0.size() != n) throw Error(ErrorKind::Configuration, "x0 dimension does not match system");

  std::vector<std::int64_t> steps;
  for (double h : horizons) steps.push_back(whole_steps(h, dt));
  const std::int64_t max_steps = steps.empty() ? 0 : *std::max_element(steps.begin(), steps.end());
  const bool safety = spec.kind == ProblemKind::Safety;

  // event[j]: first step at which trajectory j leaves (Safety) or enters
  // (Recovery) the safe set; max_steps + 1 if it never does.
  std::vector<std::int64_t> event(trajectories);
  with_evaluator(spec.drift, [&](const auto& eval) {
    SafeSetCheck check(spec);
    std::vector<double> x(n), f(n), scale(n);
    const double sq = std::sqrt(dt);
    for (std::size_t a = 0; a < n; ++a) scale[a] = spec.sigma[a] * sq;
    for (std::int64_t j = 0; j < trajectories; ++j) {
      std::mt19937_64 rng(substream_seed(seed, static_cast<std::uint64_t>(j)));
      std::normal_distribution<double> normal(0.0, 1.0);
      std::copy(x0.begin(), x0.end(), x.begin());
      std::int64_t k = 0;
      for (;; ++k) {
        const bool hit = safety ? !check.open(x.data()) : check.closed(x.data());
        if (hit || k == max_steps) {
          event[j] = hit ? k : max_steps + 1;
          break;
        }
        eval(x.data(), k * dt, f.data());
        for (std::size_t a = 0; a < n; ++a) x[a] += f[a] * dt + scale[a] * normal(rng);
      }
    }
  });

  std::vector<McResult> out;
  for (std::int64_t s : steps) {
    std::int64_t count = 0;
    for (std::int64_t e : event) count += safety ? (e > s) : (e <= s);
    McResult r;
    r.trajectories = trajectories;
    r.successes = count;
    r.dt = dt;
    r.estimate = static_cast<double>(count) / trajectories;
    r.stderr_ = std::sqrt(r.estimate * (1.0 - r.estimate) / trajectories);
    out.push_back(r);
  }
  return out;
}

McResult mc_estimate(const SystemSpec& spec, std::span<const double> x0, double horizon,
                     std::int64_t trajectories, double dt, std::uint64_t seed) {
  const double h[1] = {horizon};
  return mc_curve(spec, x0, h, trajectories, dt, seed).front();
}

std::vector<std::vector<double>> simulate_path(const SystemSpec& spec, std::span<const double> x0,
                                               double horizon, double dt, std::uint64_t seed) {
  spec.validate();
  const std::size_t n = spec.dims();
  const std::int64_t steps = whole_steps(horizon, dt);
  std::vector<std::vector<double>> path;
  path.emplace_back(x0.begin(), x0.end());
  std::mt19937_64 rng(substream_seed(seed, 0));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> f(n);
  for (std::int64_t k = 0; k < steps; ++k) {
    std::vector<double> x = path.back();
    spec.drift_at(x, k * dt, f);
    for (std::size_t a = 0; a < n; ++a) x[a] += f[a] * dt + spec.sigma[a] * std::sqrt(dt) * normal(rng);
    path.push_back(std::move(x));
  }
  return path;
}

}  // namespace neso
