// Acceptance run. `acceptance [N ...]` checks the listed criteria (all when
// none are given) and prints one "criterion N: PASS|FAIL ..." line each; the
// exit status is nonzero when any criterion fails. Trained models are cached
// under NESO_ACCEPTANCE_CACHE (environment) or the compiled-in default, keyed
// by a digest of the training config and dataset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "neso/cli.hpp"
#include "neso/error.hpp"
#include "neso/pde_oracle.hpp"
#include "neso/spline_basis.hpp"
#include "neso/stochastic_oracle.hpp"
#include "neso/surrogate.hpp"
#include "neso/tensor.hpp"
#include "neso/training.hpp"

#ifndef NESO_ACCEPTANCE_CACHE_DEFAULT
#define NESO_ACCEPTANCE_CACHE_DEFAULT "acceptance_cache"
#endif

using namespace neso;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

// Discrete monitoring misses excursions between steps; shrinking the safe box
// by kBgk * sigma * sqrt(dt) removes the leading O(sqrt(dt)) bias.
constexpr double kBgk = 0.5825971579390106;

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  // Records a named check; the first failing name is reported.
  void require(bool ok, const std::string& what) {
    if (!ok && pass) detail << "[failed: " << what << "] ";
    pass = pass && ok;
  }
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string sci(double v) {
  std::ostringstream os;
  os << std::setprecision(3) << std::scientific << v;
  return os.str();
}

std::string fix(double v, int digits = 4) {
  std::ostringstream os;
  os << std::setprecision(digits) << std::fixed << v;
  return os.str();
}

// ---------------------------------------------------------------- models

fs::path cache_root() {
  if (const char* env = std::getenv("NESO_ACCEPTANCE_CACHE")) return env;
  return NESO_ACCEPTANCE_CACHE_DEFAULT;
}

std::string digest(const TrainConfig& config, const Dataset& data) {
  std::ostringstream os;
  config.to_key_values().write(os);
  os << data.name << ' ' << data.horizon << ' ' << data.records.size() << '\n';
  for (const auto& r : data.records) {
    for (double v : r.input.values) os << format_double(v) << ' ';
    for (double v : r.targets) os << format_double(v) << ' ';
  }
  std::ostringstream hex;
  hex << std::hex << std::hash<std::string>{}(os.str());
  return hex.str();
}

struct Model {
  Checkpoint checkpoint;
  double train_seconds = 0.0;
  bool cached = false;
};

// Trains once per (config, data) digest; later calls load best.ckpt.
Model trained(const std::string& name, const TrainConfig& config, const Dataset& data) {
  const fs::path dir = cache_root() / (name + "-" + digest(config, data));
  Model m;
  if (fs::exists(dir / "complete")) {
    m.checkpoint = load_checkpoint(dir / "best.ckpt");
    m.cached = true;
  } else {
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::cerr << name << ": training " << config.epochs << " epochs into " << dir.string() << '\n';
    TrainOptions options;
    options.run_dir = dir;
    options.save_every = 50;
    options.on_epoch = [&](const HistoryRow& row) {
      if ((row.epoch + 1) % 25 == 0) {
        std::cerr << name << ": epoch " << row.epoch + 1 << " loss " << sci(row.loss.total) << " (L_p "
                  << sci(row.loss.physics) << ", L_d " << sci(row.loss.data) << ")\n";
      }
    };
    m.checkpoint = train(config, data, options).best;
    std::ofstream(dir / "complete") << "ok\n";
  }
  m.train_seconds = m.checkpoint.extra.get_double("train.seconds", 0.0);
  return m;
}

Dataset case1_data(std::uint64_t seed, Split split) {
  SineDatasetOptions o;
  o.count = 10;
  o.seed = seed;
  return make_sine_dataset(o, split);
}

TrainConfig case1_config(Readout readout) {
  TrainConfig c;
  c.arch.width = 32;
  c.arch.blocks = 3;
  c.arch.modes = 8;
  c.arch.readout = readout;
  if (readout != Readout::Grid) {
    c.arch.control_counts = {20, 16};
    c.arch.control_orders = {3, 3};
  }
  c.epochs = 500;
  c.w_d = 3.0;
  c.w_p = 1.0;
  c.adam.learning_rate = 1e-3;
  return c;
}

Model case1_model(Readout readout) {
  return trained(readout == Readout::Grid ? "case1-baseline" : "case1-neso", case1_config(readout),
                 case1_data(0, Split::Train));
}

Model case2_model() {
  ModeDatasetOptions o;
  o.systems = 20;
  o.seed = 0;
  TrainConfig c;
  c.arch.width = 16;
  c.arch.blocks = 3;
  c.arch.modes = 4;
  c.arch.control_counts = {12, 12, 12};
  c.arch.control_orders = {3, 3, 3};
  c.epochs = 300;
  c.adam.learning_rate = 1e-3;
  return trained("case2-neso", c, make_mode_dataset(o, Split::Train));
}

// Full 14-dimensional state whose mode-k coordinates are z[k].
std::vector<double> from_modes(const std::vector<LaplacianMode>& modes,
                               const std::vector<std::array<double, 2>>& z) {
  std::vector<double> x(2 * modes.size(), 0.0);
  for (std::size_t k = 0; k < modes.size(); ++k) {
    for (std::size_t i = 0; i < modes.size(); ++i) {
      const double w = modes[k].vector(static_cast<Eigen::Index>(i));
      x[2 * i] += w * z[k][0];
      x[2 * i + 1] += w * z[k][1];
    }
  }
  return x;
}

// Binomial standard error with the add-one (Laplace) estimate, nonzero when
// every path succeeds or every path fails.
double smoothed_stderr(const McResult& r) {
  const double n = static_cast<double>(r.trajectories);
  const double p = (static_cast<double>(r.successes) + 1.0) / (n + 2.0);
  return std::sqrt(p * (1.0 - p) / n);
}

// -------------------------------------------------------------- criteria

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

void criterion1(Outcome& out) {
  const double h = 1e-6;
  double worst_rel = 0.0, worst_pou = 0.0;
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int order : {2, 3, 4}) {
    const auto kv = random_knots(rng, 12, order);
    int checked = 0;
    while (checked < 100) {
      const double x = u(rng);
      bool clear = x > 3 * h && x < 1 - 3 * h;
      for (double k : kv.knots()) clear = clear && std::abs(k - x) > 3 * h;
      if (!clear) continue;
      ++checked;
      const auto values = eval_all(kv, x);
      double sum = 0.0;
      for (double v : values) sum += v;
      worst_pou = std::max(worst_pou, std::abs(sum - 1.0));
      for (int p : {1, 2}) {
        // Central difference of the (p-1)-th derivative.
        const auto lo = p == 1 ? eval_all(kv, x - h) : eval_derivative(kv, p - 1, x - h);
        const auto hi = p == 1 ? eval_all(kv, x + h) : eval_derivative(kv, p - 1, x + h);
        const auto exact = eval_derivative(kv, p, x);
        double scale = 1.0, err = 0.0;
        for (std::size_t i = 0; i < exact.size(); ++i) {
          scale = std::max(scale, std::abs(exact[i]));
          err = std::max(err, std::abs((hi[i] - lo[i]) / (2 * h) - exact[i]));
        }
        worst_rel = std::max(worst_rel, err / scale);
      }
    }
  }
  out.require(worst_rel < 1e-6, "derivative vs central difference");
  out.require(worst_pou < 1e-12, "partition of unity");
  out.detail << "max rel derivative error " << sci(worst_rel) << ", partition-of-unity residual "
             << sci(worst_pou);
}

void criterion2(Outcome& out) {
  const std::vector<BasisSpec> bases{
      make_basis(std::vector<int>{9, 7}, std::vector<int>{3, 3},
                 std::vector<Interval>{{-10.0, 4.0}, {0.0, 10.0}}),
      make_basis(std::vector<int>{6, 6, 5}, std::vector<int>{3, 3, 3},
                 std::vector<Interval>{{-1.5, 1.5}, {-1.5, 1.5}, {0.0, 10.0}})};
  double worst = 0.0;
  for (const auto& b : bases) {
    const ScalarField one = [](std::span<const double>) { return 1.0; };
    const ScalarField ramp = [](std::span<const double> p) {
      double s = 0.3;
      for (std::size_t i = 0; i < p.size(); ++i) s += (i + 1) * 0.1 * p[i];
      return s;
    };
    worst = std::max(worst, l2_residual(one, l2_project(one, b)));
    worst = std::max(worst, l2_residual(ramp, l2_project(ramp, b)));
  }
  out.require(worst < 1e-10, "constant and linear reproduction");

  const ScalarField sine = [](std::span<const double> p) { return std::sin(2 * std::numbers::pi * p[0]); };
  std::vector<double> residuals;
  for (int l : {8, 16, 32}) {
    const auto b = make_basis(std::vector<int>{l, 4}, std::vector<int>{3, 3},
                              std::vector<Interval>{{0.0, 1.0}, {0.0, 1.0}});
    residuals.push_back(l2_residual(sine, l2_project(sine, b)));
  }
  out.require(residuals[1] < residuals[0] && residuals[2] < residuals[1], "sin(2 pi u) refinement");
  out.detail << "const/linear residual " << sci(worst) << ", sin residuals " << sci(residuals[0]) << " > "
             << sci(residuals[1]) << " > " << sci(residuals[2]);
}

ArchConfig smoke_arch(Readout readout) {
  ArchConfig a;
  a.width = 8;
  a.blocks = 2;
  a.modes = 3;
  a.readout = readout;
  if (readout != Readout::Grid) {
    a.control_counts = {8, 7};
    a.control_orders = {3, 3};
  }
  return a;
}

// Expected clamped value of control entry `idx`, or NaN for a free entry.
double clamped_value(std::span<const int> idx, std::span<const int> shape, const Icbc& icbc) {
  const std::size_t state = shape.size() - 1;
  double v = std::numeric_limits<double>::quiet_NaN();
  if (idx[state] == 0) v = icbc.initial_value();
  for (std::size_t a = 0; a < state; ++a) {
    for (int side : {0, 1}) {
      if (idx[a] != (side ? shape[a] - 1 : 0)) continue;
      if (icbc.faces[a][side] == FaceCondition::Boundary) return icbc.boundary_value();
      v = icbc.initial_value();
    }
  }
  return v;
}

void criterion3(Outcome& out) {
  SineDatasetOptions so;
  so.count = 2;
  so.seed = 21;
  so.input_grid = {8, 8};
  so.eval_x = 8;
  so.eval_t = 6;
  so.truth_panels = 1024;
  const auto data = make_sine_dataset(so, Split::Train);
  double worst_grad = 0.0;
  for (auto readout : {Readout::Hazard, Readout::Affine, Readout::Grid}) {
    TrainConfig cfg;
    cfg.arch = smoke_arch(readout);
    cfg.arch.grid = data.records[0].input.grid;
    cfg.arch.in_channels = data.records[0].input.channels;
    cfg.collocation = 32;
    const NeuralFunctional net(cfg.arch);
    auto params = init_params(3, cfg.arch);
    std::vector<PreparedRecord> prep;
    for (const auto& r : data.records) prep.push_back(prepare_record(r, cfg));
    const std::vector<std::size_t> batch{0, 1};
    std::vector<double> grad(params.data.size());
    total_loss(net, params, data, prep, batch, cfg, grad);
    std::mt19937_64 rng(9);
    std::uniform_int_distribution<std::size_t> pick(0, params.data.size() - 1);
    std::vector<std::size_t> probe;
    for (const auto& t : params.tensors) probe.push_back(t.offset);
    for (int i = 0; i < 60; ++i) probe.push_back(pick(rng));
    for (std::size_t i : probe) {
      const double keep = params.data[i];
      const double h = 1e-6 * std::max(1.0, std::abs(keep));
      params.data[i] = keep + h;
      const double up = total_loss(net, params, data, prep, batch, cfg).total;
      params.data[i] = keep - h;
      const double dn = total_loss(net, params, data, prep, batch, cfg).total;
      params.data[i] = keep;
      const double fd = (up - dn) / (2 * h);
      worst_grad = std::max(worst_grad,
                            std::abs(fd - grad[i]) / std::max({std::abs(fd), std::abs(grad[i]), 1e-4}));
    }
  }
  out.require(worst_grad < 1e-4, "reverse mode vs finite differences");

  // ICBC slices of the forward output for random, inflated parameters.
  double worst_icbc = 0.0;
  std::size_t slices = 0;
  auto check = [&](const ArchConfig& arch, const InputField& in, const Icbc& icbc, std::uint64_t seed) {
    auto p = init_params(seed, arch);
    for (double& v : p.data) v *= 3.0;
    const NeuralFunctional net(arch);
    const auto tape = net.forward(p, in, icbc);
    const auto shape = arch.basis(in.domain).shape();
    std::size_t flat = 0;
    for_each_index(shape, [&](std::span<const int> idx) {
      const double want = clamped_value(idx, shape, icbc);
      if (!std::isnan(want)) {
        worst_icbc = std::max(worst_icbc, std::abs(tape.output[flat] - want));
        ++slices;
      }
      ++flat;
    });
  };
  for (auto readout : {Readout::Hazard, Readout::Affine}) {
    auto arch = smoke_arch(readout);
    arch.grid = {8, 8};
    arch.in_channels = 3;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto sys = random_sine_dynamics(seed);
      check(arch, sample_input(sys, arch.grid, {0.0, 10.0}), sys.icbc(), seed);
    }
    arch.grid = {6, 6, 6};
    arch.in_channels = 3;
    arch.control_counts = {7, 7, 6};
    arch.control_orders = {3, 3, 3};
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      check(arch, mode_input(1.0, 0.5 * seed, 1.0 + 0.2 * seed, arch.grid, {0.0, 10.0}),
            Icbc::all_boundary(ProblemKind::Safety, 2), seed);
    }
  }
  out.require(slices > 0 && worst_icbc < 1e-12, "ICBC slices exact");
  out.detail << "max rel gradient error " << sci(worst_grad) << ", max ICBC slice error " << sci(worst_icbc)
             << " over " << slices << " clamped entries";
}

void criterion4(Outcome& out) {
  const double target = 0.31731;
  const double truth = recovery_truth(SineDrift{}, 3.0, 1.0);
  out.require(std::abs(truth - target) <= 1e-4, "closed-form value");

  const auto rec = sine_recovery_system(SineDrift{});
  const auto g = solve_pde(rec, PdeGrid{{281}, 100}, 10.0);
  double worst = 0.0;
  for (int i = 0; i < 281; ++i) {
    const double x = g.node(0, i);
    if (x < -10.0 || x > 3.5) continue;
    for (std::size_t k = 0; k < g.times.size(); ++k) {
      const double t = g.times[k];
      if (t < 0.1 - 1e-12) continue;
      worst = std::max(worst, std::abs(g.values[i * g.times.size() + k] - recovery_truth(SineDrift{}, x, t)));
    }
  }
  out.require(worst <= 0.02, "PDE vs closed form");

  const auto mc = mc_estimate(rec, std::vector<double>{3.0}, 1.0, 10000, 1e-3, 2024);
  out.require(std::abs(mc.estimate - target) <= 3.0 * mc.stderr_, "Monte Carlo vs closed form");
  out.detail << "closed form " << fix(truth, 6) << ", PDE max abs error " << sci(worst) << ", MC "
             << fix(mc.estimate) << " +- " << fix(mc.stderr_);
}

void criterion5(Outcome& out, double& train_seconds) {
  const auto test = case1_data(1, Split::Test);
  const auto neso = case1_model(Readout::Hazard);
  const auto base = case1_model(Readout::Grid);
  for (const auto* m : {&neso, &base}) train_seconds += m->cached ? m->train_seconds : 0.0;
  const auto a = evaluate(neso.checkpoint, test).summary;
  const auto b = evaluate(base.checkpoint, test).summary;
  out.require(a.mse <= 5e-3, "NeSO test MSE <= 5e-3");
  out.require(a.rel_err <= 0.15, "NeSO mean relative error <= 0.15");
  out.require(b.mse >= a.mse, "baseline MSE >= NeSO MSE");
  out.detail << "NeSO MSE " << sci(a.mse) << " rel " << fix(a.rel_err) << "; baseline MSE " << sci(b.mse)
             << " rel " << fix(b.rel_err) << "; training " << fix(neso.train_seconds + base.train_seconds, 0) << " s";
}

void criterion6(Outcome& out) {
  // Network eigenstructure.
  const auto lap = case_study_laplacian();
  const auto modes = laplacian_modes(lap);
  double ortho = 0.0, sum = 0.0;
  for (std::size_t i = 0; i < modes.size(); ++i) {
    sum += modes[i].lambda;
    for (std::size_t j = 0; j < modes.size(); ++j) {
      ortho = std::max(ortho, std::abs(modes[i].vector.dot(modes[j].vector) - (i == j ? 1.0 : 0.0)));
    }
  }
  out.require(std::abs(modes[0].lambda) < 1e-12, "lambda_1 = 0");
  out.require(std::abs(sum - 22.0) < 1e-10, "sum of eigenvalues = 22");
  out.require(ortho < 1e-12, "orthonormal modes");

  // H = [[0, I], [-(beta1 I + L), -beta2 I]] per agent pair, expanded by hand.
  const std::vector<double> alpha{2, 2, 1, 1, 1, 1, 1};
  const auto spec = case_study_network(1.0, alpha);
  const auto h = assemble_H(spec);
  bool exact = h.rows() == 14 && h.cols() == 14;
  for (int i = 0; exact && i < 7; ++i) {
    for (int j = 0; j < 7; ++j) {
      const double lij = lap(i, j) + (i == j ? spec.beta1 : 0.0);
      exact = exact && h(2 * i, 2 * j) == 0.0 && h(2 * i, 2 * j + 1) == (i == j ? 1.0 : 0.0) &&
              h(2 * i + 1, 2 * j) == -lij && h(2 * i + 1, 2 * j + 1) == (i == j ? -spec.beta2 : 0.0);
    }
  }
  out.require(exact, "assemble_H blocks");

  // Mode PDE vs 2D mode Monte Carlo at 9 probes per mode, at t = 1. The
  // probe solves use 240 nodes per unit of alpha, where the cell Peclet number
  // stays near 2 and the solver keeps central differences; at dt = 1e-3 the
  // continuity-corrected walk is unbiased to well inside one stderr.
  const double horizon = 10.0, probe_t = 1.0, dt = 1e-3, shift = kBgk * spec.sigma * std::sqrt(dt);
  PdeGrid grid;
  grid.points = {161, 161};
  grid.time_slices = 20;
  std::vector<GridSolution> sols;
  int agree = 0, probes = 0;
  double worst_z = 0.0;
  std::string worst_at;
  for (std::size_t k = 0; k < modes.size(); ++k) {
    const double gamma = spec.beta1 + modes[k].lambda;
    sols.push_back(solve_subsystem_pde(gamma, spec.beta2, spec.sigma, alpha[k], grid, horizon));
    const int fine = static_cast<int>(std::lround(240 * alpha[k])) + 1;
    const auto probe_sol =
        solve_subsystem_pde(gamma, spec.beta2, spec.sigma, alpha[k], PdeGrid{{fine, fine}, 10}, probe_t);
    const auto sys = mode_safety_system(gamma, spec.beta2, spec.sigma, alpha[k] - shift);
    for (double p : {-0.7, 0.0, 0.7}) {
      for (double v : {-0.7, 0.0, 0.7}) {
        const std::vector<double> x0{p * alpha[k], v * alpha[k]};
        const auto mc = mc_estimate(sys, x0, probe_t, 20000, dt, substream_seed(600 + k, probes));
        const double z = std::abs(probe_sol.interpolate(x0, probe_t) - mc.estimate) / smoothed_stderr(mc);
        if (z > worst_z) {
          worst_z = z;
          worst_at = "mode " + std::to_string(k + 1) + " (" + fix(p, 1) + ", " + fix(v, 1) + ")";
        }
        agree += z <= 3.0;
        ++probes;
      }
    }
  }
  out.require(agree == probes, "mode PDE within 3 stderr of mode MC");

  // Product formula vs the 14-dimensional Monte Carlo, averaged over t.
  auto full = full_network_system(spec);
  for (auto& b : full.safe_box) b = {b.lo + shift, b.hi - shift};
  std::vector<double> times;
  for (int j = 0; j <= 20; ++j) times.push_back(0.5 * j);
  double worst_avg = 0.0;
  const std::vector<std::vector<std::array<double, 2>>> starts{
      {{0.5, 0.5}, {-0.5, 0.5}, {0.3, -0.3}, {-0.3, 0.2}, {0.2, 0.2}, {0.1, -0.2}, {-0.2, 0.1}},
      {{1.2, -0.8}, {0.8, 1.0}, {0.5, 0.4}, {-0.6, -0.5}, {0.4, -0.6}, {-0.5, 0.6}, {0.6, 0.3}},
      {{0.0, 0.0}, {0.0, 0.0}, {0.7, 0.7}, {-0.7, -0.7}, {0.0, 0.0}, {0.0, 0.0}, {0.0, 0.0}}};
  for (std::size_t s = 0; s < starts.size(); ++s) {
    const auto x0 = from_modes(modes, starts[s]);
    const auto curve = mc_curve(full, x0, times, 1000, dt, substream_seed(700, s));
    double acc = 0.0;
    for (std::size_t j = 0; j < times.size(); ++j) {
      acc += std::abs(product_safety(sols, modes, x0, times[j]) - curve[j].estimate);
    }
    worst_avg = std::max(worst_avg, acc / static_cast<double>(times.size()));
  }
  out.require(worst_avg <= 0.05, "product formula vs 14-dim MC");
  out.detail << "sum lambda " << fix(sum, 12) << ", orthonormality " << sci(ortho) << ", mode probes " << agree
             << "/" << probes << " (max |z| " << fix(worst_z, 2) << " at " << worst_at << "), product vs 14-dim MC time-avg |diff| "
             << fix(worst_avg);
}

void criterion7(Outcome& out, double& train_seconds) {
  const auto model = case2_model();
  if (model.cached) train_seconds = model.train_seconds;
  BenchmarkOptions o;
  o.instances = 3;
  const auto r = run_benchmark(model.checkpoint, o);
  const double neso = r.row("neso").seconds, pde = r.row("pde").seconds, mc = r.row("mc").seconds;
  out.require(r.row("neso").n_systems >= 3, "at least 3 instances");
  out.require(neso < pde, "NeSO faster than PDE");
  out.require(neso < mc, "NeSO faster than MC");
  out.require(r.crossover_pde.has_value() && r.crossover_mc.has_value(), "finite crossovers");
  double gap_pde = 0.0, gap_mc = 0.0, gap_oracles = 0.0;
  for (const auto& p : r.probes) {
    gap_pde += std::abs(p.neso - p.pde);
    gap_mc += std::abs(p.neso - p.mc);
    gap_oracles += std::abs(p.pde - p.mc);
  }
  const double n = static_cast<double>(r.probes.size());
  out.detail << "seconds NeSO " << sci(neso) << ", PDE " << sci(pde) << ", MC " << sci(mc) << "; n* PDE "
             << (r.crossover_pde ? std::to_string(*r.crossover_pde) : "inf") << ", MC "
             << (r.crossover_mc ? std::to_string(*r.crossover_mc) : "inf") << "; mean |NeSO-PDE| "
             << fix(gap_pde / n) << ", mean |NeSO-MC| " << fix(gap_mc / n) << ", mean |PDE-MC| " << fix(gap_oracles / n);
}

// Checks one curve over increasing times; `sign` +1 non-decreasing, -1 non-increasing.
struct MonotoneTally {
  int curves = 0;
  int violations = 0;
  int out_of_range = 0;

  void add(const std::vector<double>& curve, int sign) {
    ++curves;
    bool mono = true;
    for (std::size_t j = 0; j < curve.size(); ++j) {
      if (!(curve[j] >= -1e-6 && curve[j] <= 1.0 + 1e-6)) ++out_of_range;
      if (j && sign * (curve[j] - curve[j - 1]) < 0.0) mono = false;
    }
    violations += !mono;
  }
  bool ok(int expected) const { return curves == expected && violations == 0 && out_of_range == 0; }
  std::string text() const {
    return std::to_string(curves - violations) + "/" + std::to_string(curves) + " monotone, " +
           std::to_string(out_of_range) + " out of range";
  }
};

void criterion8(Outcome& out) {
  std::vector<double> times;
  for (int j = 0; j <= 40; ++j) times.push_back(0.25 * j);
  const auto modes = laplacian_modes(case_study_laplacian());
  const std::vector<double> fractions{-0.6, -0.3, 0.0, 0.3, 0.6};
  auto mode_state = [](double alpha, std::size_t i) {
    return std::vector<double>{0.6 * alpha * std::cos(1.3 * i), 0.6 * alpha * std::sin(1.3 * i)};
  };

  // Monte Carlo: sine recovery systems and mode safety systems.
  MonotoneTally mc_rec, mc_saf;
  for (std::uint64_t s = 0; s < 4; ++s) {
    const auto sys = random_sine_dynamics(substream_seed(800, s));
    for (std::size_t i = 0; i < 5; ++i) {
      const std::vector<double> x0{-9.0 + 3.0 * i};
      std::vector<double> c;
      for (const auto& r : mc_curve(sys, x0, times, 400, 1e-2, substream_seed(801, 5 * s + i))) c.push_back(r.estimate);
      mc_rec.add(c, +1);
    }
  }
  for (std::size_t k = 0; k < 4; ++k) {
    const double alpha = 1.0 + 0.25 * k;
    const auto sys = mode_safety_system(1.0 + modes[k].lambda, 1.0, 0.2, alpha);
    for (std::size_t i = 0; i < 5; ++i) {
      std::vector<double> c;
      for (const auto& r : mc_curve(sys, mode_state(alpha, i), times, 400, 1e-2, substream_seed(802, 5 * k + i))) {
        c.push_back(r.estimate);
      }
      mc_saf.add(c, -1);
    }
  }

  // PDE: time-invariant recovery drifts (constant sines) and mode safety systems.
  MonotoneTally pde_rec, pde_saf;
  for (double drift : {0.0, 0.5, -0.5, 1.0}) {
    SineDrift f;
    f.a1 = drift;
    f.w1 = 0.0;
    f.psi1 = std::numbers::pi / 2;
    const auto g = solve_pde(sine_recovery_system(f), PdeGrid{{141}, 40}, 10.0);
    for (std::size_t i = 0; i < 5; ++i) {
      const std::vector<double> x0{-9.0 + 3.0 * i};
      std::vector<double> c;
      for (double t : times) c.push_back(g.interpolate(x0, t));
      pde_rec.add(c, +1);
    }
  }
  for (std::size_t k = 0; k < 4; ++k) {
    const double alpha = 1.0 + 0.25 * k;
    const auto g = solve_subsystem_pde(1.0 + modes[k].lambda, 1.0, 0.2, alpha, PdeGrid{{61, 61}, 40}, 10.0);
    for (std::size_t i = 0; i < 5; ++i) {
      std::vector<double> c;
      for (double t : times) c.push_back(g.interpolate(mode_state(alpha, i), t));
      pde_saf.add(c, -1);
    }
  }

  // Trained surrogates on unseen systems.
  MonotoneTally net_rec, net_saf;
  const auto rec_model = case1_model(Readout::Hazard);
  const auto test = case1_data(1, Split::Test);
  for (std::size_t s = 0; s < 4; ++s) {
    const auto& r = test.records[s];
    for (std::size_t i = 0; i < 5; ++i) {
      std::vector<std::vector<double>> pts;
      for (double t : times) pts.push_back({-9.0 + 3.0 * i, t});
      net_rec.add(predict_points(rec_model.checkpoint.params, r, pts), +1);
    }
  }
  const auto saf_model = case2_model();
  const NeuralFunctional net(saf_model.checkpoint.params.config);
  for (std::size_t k = 0; k < 4; ++k) {
    const double alpha = 1.0 + 0.25 * k + 0.1;
    const auto in = mode_input(1.3, modes[k].lambda, alpha, saf_model.checkpoint.params.config.grid, {0.0, 10.0});
    const auto surface = net.control_tensor(net.forward(saf_model.checkpoint.params, in, ProblemKind::Safety));
    for (std::size_t i = 0; i < 5; ++i) {
      const auto z = mode_state(alpha, i);
      std::vector<double> c;
      for (double t : times) c.push_back(eval_value(surface, std::vector<double>{z[0], z[1], t}));
      net_saf.add(c, -1);
    }
  }

  out.require(mc_rec.ok(20) && mc_saf.ok(20), "MC monotone and in range");
  out.require(pde_rec.ok(20) && pde_saf.ok(20), "PDE monotone and in range");
  out.require(net_rec.ok(20) && net_saf.ok(20), "NeSO monotone and in range");
  out.detail << "MC recovery " << mc_rec.text() << ", safety " << mc_saf.text() << "; PDE recovery "
             << pde_rec.text() << ", safety " << pde_saf.text() << "; NeSO recovery " << net_rec.text()
             << ", safety " << net_saf.text();
}

// Wall-clock limits per criterion, in seconds.
constexpr double kLimit[] = {0, 5, 10, 60, 180, 45 * 60, 20 * 60, 15 * 60, 5 * 60};

bool run(int n) {
  Outcome out;
  const auto t0 = Clock::now();
  double train_seconds = 0.0;  // cached training time, charged to the criterion that owns the model
  try {
    switch (n) {
      case 1: criterion1(out); break;
      case 2: criterion2(out); break;
      case 3: criterion3(out); break;
      case 4: criterion4(out); break;
      case 5: criterion5(out, train_seconds); break;
      case 6: criterion6(out); break;
      case 7: criterion7(out, train_seconds); break;
      case 8: criterion8(out); break;
      default: throw Error(ErrorKind::Configuration, "no criterion " + std::to_string(n));
    }
  } catch (const std::exception& e) {
    out.pass = false;
    out.detail << "[error: " << e.what() << "] ";
  }
  const double elapsed = seconds_since(t0) + train_seconds;
  out.require(elapsed < kLimit[n], "runtime < " + fix(kLimit[n], 0) + " s");
  std::cout << "criterion " << n << ": " << (out.pass ? "PASS" : "FAIL") << " (" << fix(elapsed, 1) << " s) "
            << out.detail.str() << std::endl;
  return out.pass;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<int> which;
  for (int i = 1; i < argc; ++i) which.push_back(std::atoi(argv[i]));
  if (which.empty()) which = {1, 2, 3, 4, 5, 6, 7, 8};
  bool all = true;
  for (int n : which) all = run(n) && all;
  return all ? 0 : 1;
}
