#include "neso/cli.hpp"

#include <array>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>

#include "neso/error.hpp"
#include "neso/pde_oracle.hpp"
#include "neso/stochastic_oracle.hpp"
#include "neso/tensor.hpp"

namespace neso {

namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::vector<int> to_ints(const std::vector<double>& v) {
  std::vector<int> out;
  for (double d : v) out.push_back(static_cast<int>(std::lround(d)));
  return out;
}

std::string join_ints(std::span<const int> v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? " " : "") + std::to_string(v[i]);
  return out;
}

std::string join_doubles(std::span<const double> v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? " " : "") + format_double(v[i]);
  return out;
}

void write_text(const fs::path& path, const KeyValues& kv) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorKind::Io, "cannot write " + path.string());
  kv.write(os);
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorKind::Io, "cannot write " + path.string());
  return os;
}

void require_kind(ProblemKind model, ProblemKind data) {
  if (model != data) {
    throw Error(ErrorKind::KindMismatch, "checkpoint solves " + kind_name(model) + " but the data is " +
                                             kind_name(data));
  }
}

double horizon_of(const Checkpoint& c) { return c.extra.get_double("data.horizon", 10.0); }

bool is_mode_model(const Checkpoint& c) { return c.params.config.grid.size() == 3; }

Record record_from_source(const RecordSource& source, const Checkpoint& c) {
  Record r;
  r.source = source;
  materialize(r, c.params.config.grid, horizon_of(c));
  return r;
}

}  // namespace

void make_fresh_dir(const fs::path& dir) {
  if (dir.empty()) throw Error(ErrorKind::Configuration, "an output directory is required");
  if (fs::exists(dir) && !(fs::is_directory(dir) && fs::is_empty(dir))) {
    throw Error(ErrorKind::Io, "output directory " + dir.string() + " exists and is not empty");
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());
}

Dataset generate_dataset(const KeyValues& config, KeyValues& resolved) {
  const std::string which = config.get_string("case", "sine-recovery");
  const Split split = parse_split(config.get_string("split", "train"));
  resolved.set("case", which);
  resolved.set("split", split_name(split));
  if (which == "sine-recovery") {
    SineDatasetOptions o;
    o.count = static_cast<int>(config.get_int("count", o.count));
    o.seed = config.get_u64("seed", o.seed);
    o.input_grid = to_ints(config.get_doubles("input_grid", {32, 32}));
    o.eval_x = static_cast<int>(config.get_int("eval_x", o.eval_x));
    o.eval_t = static_cast<int>(config.get_int("eval_t", o.eval_t));
    o.horizon = config.get_double("horizon", o.horizon);
    o.truth_panels = static_cast<int>(config.get_int("truth_panels", o.truth_panels));
    resolved.set("count", std::to_string(o.count));
    resolved.set("seed", std::to_string(o.seed));
    resolved.set("input_grid", join_ints(o.input_grid));
    resolved.set("eval_x", std::to_string(o.eval_x));
    resolved.set("eval_t", std::to_string(o.eval_t));
    resolved.set("horizon", format_double(o.horizon));
    resolved.set("truth_panels", std::to_string(o.truth_panels));
    return make_sine_dataset(o, split);
  }
  if (which == "multi-agent-mode") {
    ModeDatasetOptions o;
    o.systems = static_cast<int>(config.get_int("systems", o.systems));
    o.seed = config.get_u64("seed", o.seed);
    o.input_grid = to_ints(config.get_doubles("input_grid", {8, 8, 8}));
    o.beta2_lo = config.get_double("beta2_lo", o.beta2_lo);
    o.beta2_hi = config.get_double("beta2_hi", o.beta2_hi);
    o.alpha_lo = config.get_double("alpha_lo", o.alpha_lo);
    o.alpha_hi = config.get_double("alpha_hi", o.alpha_hi);
    o.sigma = config.get_double("sigma", o.sigma);
    o.horizon = config.get_double("horizon", o.horizon);
    o.pde_points = static_cast<int>(config.get_int("pde_points", o.pde_points));
    o.pde_slices = static_cast<int>(config.get_int("pde_slices", o.pde_slices));
    o.sample_grid = to_ints(config.get_doubles("sample_grid", {11, 11, 11}));
    resolved.set("systems", std::to_string(o.systems));
    resolved.set("seed", std::to_string(o.seed));
    resolved.set("input_grid", join_ints(o.input_grid));
    resolved.set("beta2_lo", format_double(o.beta2_lo));
    resolved.set("beta2_hi", format_double(o.beta2_hi));
    resolved.set("alpha_lo", format_double(o.alpha_lo));
    resolved.set("alpha_hi", format_double(o.alpha_hi));
    resolved.set("sigma", format_double(o.sigma));
    resolved.set("horizon", format_double(o.horizon));
    resolved.set("pde_points", std::to_string(o.pde_points));
    resolved.set("pde_slices", std::to_string(o.pde_slices));
    resolved.set("sample_grid", join_ints(o.sample_grid));
    return make_mode_dataset(o, split);
  }
  throw Error(ErrorKind::Configuration, "unknown case '" + which + "'");
}

Dataset cmd_gen_data(const KeyValues& config, const fs::path& out) {
  KeyValues resolved;
  Dataset d = generate_dataset(config, resolved);
  make_fresh_dir(out);
  save_dataset(out, d, resolved);
  write_text(out / "config.txt", resolved);
  return d;
}

TrainResult cmd_train(const KeyValues& config, const fs::path& out) {
  const TrainConfig tc = TrainConfig::from_key_values(config);
  const fs::path data_dir = config.require_string("data");
  Dataset data = load_dataset(data_dir);
  for (auto& r : data.records) r.split = Split::Train;
  if (const auto val = config.find("validation")) {
    Dataset v = load_dataset(*val);
    require_kind(v.kind, data.kind);
    for (auto& r : v.records) {
      r.split = Split::Validation;
      data.records.push_back(std::move(r));
    }
  }
  make_fresh_dir(out);
  KeyValues echo = tc.to_key_values();
  echo.set("data", data_dir.string());
  if (const auto val = config.find("validation")) echo.set("validation", *val);
  write_text(out / "config.txt", echo);
  TrainOptions opts;
  opts.run_dir = out;
  TrainResult result = train(tc, data, opts);
  // The loop fills grid and control defaults; echo what actually ran.
  for (const auto& [k, v] : result.last.extra.entries()) {
    if (k.rfind("train.", 0) != 0) echo.set(k, v);
  }
  echo.set("train.seconds", format_double(result.seconds));
  write_text(out / "config.txt", echo);
  return result;
}

Evaluation evaluate(const Checkpoint& c, const Dataset& d, std::optional<Split> split) {
  require_kind(c.kind, d.kind);
  Evaluation e;
  std::vector<double> all_truth, all_pred;
  for (std::size_t i = 0; i < d.records.size(); ++i) {
    const auto& r = d.records[i];
    if (split && r.split != *split) continue;
    const auto pred = predict_points(c.params, r, r.points);
    e.records.push_back({i, pred.size(), compute_metrics(r.targets, pred)});
    all_truth.insert(all_truth.end(), r.targets.begin(), r.targets.end());
    all_pred.insert(all_pred.end(), pred.begin(), pred.end());
  }
  if (e.records.empty()) throw Error(ErrorKind::Configuration, "no records to evaluate");
  e.summary = compute_metrics(all_truth, all_pred);
  return e;
}

void write_metrics_csv(std::ostream& os, const Evaluation& e) {
  os << "record,points,mse,mae,rel_err\n";
  std::size_t points = 0;
  for (const auto& r : e.records) {
    os << r.record << ',' << r.points << ',' << format_double(r.metrics.mse) << ','
       << format_double(r.metrics.mae) << ',' << format_double(r.metrics.rel_err) << '\n';
    points += r.points;
  }
  os << "all," << points << ',' << format_double(e.summary.mse) << ',' << format_double(e.summary.mae)
     << ',' << format_double(e.summary.rel_err) << '\n';
}

Evaluation cmd_eval(const KeyValues& config, const fs::path& out) {
  const fs::path ckpt = config.require_string("checkpoint");
  const fs::path data_dir = config.require_string("data");
  const std::string split_key = config.get_string("split", "all");
  std::optional<Split> split;
  if (split_key != "all") split = parse_split(split_key);
  const Checkpoint c = load_checkpoint(ckpt);
  const Dataset d = load_dataset(data_dir);
  const Evaluation e = evaluate(c, d, split);
  make_fresh_dir(out);
  KeyValues echo;
  echo.set("checkpoint", ckpt.string());
  echo.set("data", data_dir.string());
  echo.set("split", split_key);
  write_text(out / "config.txt", echo);
  auto os = open_out(out / "metrics.csv");
  write_metrics_csv(os, e);
  return e;
}

GridSolution cmd_predict(const KeyValues& config, const fs::path& out) {
  const fs::path ckpt = config.require_string("checkpoint");
  const Checkpoint c = load_checkpoint(ckpt);
  const std::string source = config.get_string("source", is_mode_model(c) ? "mode" : "sine");
  KeyValues echo;
  echo.set("checkpoint", ckpt.string());
  echo.set("source", source);
  RecordSource src;
  if (source == "sine") {
    require_kind(c.kind, ProblemKind::Recovery);
    const auto seed = config.get_u64("system_seed", 0);
    src = SineSource{seed};
    echo.set("system_seed", std::to_string(seed));
  } else if (source == "mode") {
    require_kind(c.kind, ProblemKind::Safety);
    ModeSource m;
    m.beta2 = config.get_double("beta2", m.beta2);
    m.lambda = config.get_double("lambda", m.lambda);
    m.alpha = config.get_double("alpha", m.alpha);
    src = m;
    echo.set("beta2", format_double(m.beta2));
    echo.set("lambda", format_double(m.lambda));
    echo.set("alpha", format_double(m.alpha));
  } else {
    throw Error(ErrorKind::Configuration, "unknown source '" + source + "'");
  }
  const Record r = record_from_source(src, c);
  const std::size_t n = r.system.dims();
  std::vector<int> grid = to_ints(config.get_doubles("grid", {}));
  if (grid.empty()) grid.assign(n + 1, 21);
  if (grid.size() != n + 1) throw Error(ErrorKind::Configuration, "grid needs one count per state axis and time");
  for (int m : grid) {
    if (m < 2) throw Error(ErrorKind::Configuration, "grid needs >= 2 nodes per axis");
  }
  echo.set("grid", join_ints(grid));

  GridSolution g;
  g.kind = c.kind;
  g.domain = r.system.domain;
  g.points.assign(grid.begin(), grid.end() - 1);
  const double horizon = horizon_of(c);
  for (int k = 0; k < grid.back(); ++k) g.times.push_back(horizon * k / (grid.back() - 1));
  std::vector<std::vector<double>> points;
  for_each_index(grid, [&](std::span<const int> idx) {
    std::vector<double> p(n + 1);
    for (std::size_t a = 0; a < n; ++a) p[a] = g.domain[a].lo + g.domain[a].width() * idx[a] / (grid[a] - 1);
    p[n] = g.times[idx[n]];
    points.push_back(std::move(p));
  });
  g.values = predict_points(c.params, r, points);

  make_fresh_dir(out);
  write_text(out / "config.txt", echo);
  save_array_file(out / "prediction.arr", to_array_file(g));
  auto os = open_out(out / "prediction.csv");
  for (std::size_t a = 0; a < n; ++a) os << 'x' << a << ',';
  os << "t,F\n";
  for (std::size_t i = 0; i < points.size(); ++i) {
    for (double v : points[i]) os << format_double(v) << ',';
    os << format_double(g.values[i]) << '\n';
  }
  return g;
}

BenchmarkOptions BenchmarkOptions::from_key_values(const KeyValues& kv) {
  BenchmarkOptions o;
  o.instances = static_cast<int>(kv.get_int("instances", o.instances));
  o.seed = kv.get_u64("seed", o.seed);
  o.probes = static_cast<int>(kv.get_int("probes", o.probes));
  o.probe_times = kv.get_doubles("probe_times", o.probe_times);
  o.pde_points = static_cast<int>(kv.get_int("pde_points", o.pde_points));
  o.pde_slices = static_cast<int>(kv.get_int("pde_slices", o.pde_slices));
  o.mc_trajectories = kv.get_int("mc_trajectories", o.mc_trajectories);
  o.mc_dt = kv.get_double("mc_dt", o.mc_dt);
  o.train_seconds = kv.get_double("train_seconds", o.train_seconds);
  if (o.instances < 1 || o.probes < 1 || o.probe_times.empty() || o.mc_trajectories < 1 || !(o.mc_dt > 0.0)) {
    throw Error(ErrorKind::Configuration, "benchmark needs >= 1 instance, probe, time and trajectory");
  }
  return o;
}

KeyValues BenchmarkOptions::to_key_values() const {
  KeyValues kv;
  kv.set("instances", std::to_string(instances));
  kv.set("seed", std::to_string(seed));
  kv.set("probes", std::to_string(probes));
  kv.set("probe_times", join_doubles(probe_times));
  kv.set("pde_points", std::to_string(pde_points));
  kv.set("pde_slices", std::to_string(pde_slices));
  kv.set("mc_trajectories", std::to_string(mc_trajectories));
  kv.set("mc_dt", format_double(mc_dt));
  kv.set("train_seconds", format_double(train_seconds));
  return kv;
}

const BenchmarkRow& BenchmarkResult::row(const std::string& method) const {
  for (const auto& r : rows) {
    if (r.method == method) return r;
  }
  throw Error(ErrorKind::Configuration, "no benchmark row '" + method + "'");
}

std::optional<long> crossover(double train_seconds, double neso_per_system, double baseline_per_system) {
  const double gain = baseline_per_system - neso_per_system;
  if (!(gain > 0.0)) return std::nullopt;
  return static_cast<long>(std::floor(train_seconds / gain)) + 1;
}

BenchmarkResult run_benchmark(const Checkpoint& c, const BenchmarkOptions& o) {
  const double horizon = horizon_of(c);
  for (double t : o.probe_times) {
    if (!(t >= 0.0 && t <= horizon)) throw Error(ErrorKind::Configuration, "probe time outside [0, horizon]");
  }
  const NeuralFunctional net(c.params.config);
  BenchmarkResult res;
  res.train_seconds = o.train_seconds >= 0.0 ? o.train_seconds : c.extra.get_double("train.seconds", 0.0);
  double t_neso = 0.0, t_pde = 0.0, t_mc = 0.0;
  const bool mode = is_mode_model(c);
  if (mode) require_kind(c.kind, ProblemKind::Safety);
  else require_kind(c.kind, ProblemKind::Recovery);
  const auto modes = laplacian_modes(case_study_laplacian());
  const std::vector<int>& grid = c.params.config.grid;
  const Interval time{0.0, horizon};

  for (int inst = 0; inst < o.instances; ++inst) {
    std::mt19937_64 rng(substream_seed(o.seed, static_cast<std::uint64_t>(inst)));
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::vector<std::vector<double>> x0(o.probes);
    std::vector<std::vector<double>> neso(o.probes), pde(o.probes), mc(o.probes);

    if (mode) {
      const double beta2 = 0.5 + 1.5 * u01(rng);
      std::vector<double> alpha(modes.size());
      for (double& a : alpha) a = 1.0 + u01(rng);
      const auto spec = case_study_network(beta2, alpha);
      // Probe states: mode coordinates inside half of every box, mapped back.
      std::vector<std::vector<std::array<double, 2>>> z(o.probes);
      for (int p = 0; p < o.probes; ++p) {
        x0[p].assign(2 * modes.size(), 0.0);
        for (std::size_t k = 0; k < modes.size(); ++k) {
          const std::array<double, 2> zk{alpha[k] * (u01(rng) - 0.5), alpha[k] * (u01(rng) - 0.5)};
          z[p].push_back(zk);
          for (std::size_t i = 0; i < modes.size(); ++i) {
            x0[p][2 * i] += modes[k].vector(static_cast<Eigen::Index>(i)) * zk[0];
            x0[p][2 * i + 1] += modes[k].vector(static_cast<Eigen::Index>(i)) * zk[1];
          }
        }
      }

      auto t0 = Clock::now();
      std::vector<ControlTensor> surfaces;
      for (std::size_t k = 0; k < modes.size(); ++k) {
        const auto in = mode_input(beta2, modes[k].lambda, alpha[k], grid, time);
        surfaces.push_back(net.control_tensor(net.forward(c.params, in, ProblemKind::Safety)));
      }
      for (int p = 0; p < o.probes; ++p) {
        for (double t : o.probe_times) {
          double prod = 1.0;
          for (std::size_t k = 0; k < modes.size(); ++k) {
            const auto& zk = z[p][k];
            if (std::abs(zk[0]) > alpha[k] || std::abs(zk[1]) > alpha[k]) {
              prod = 0.0;
              break;
            }
            prod *= eval_value(surfaces[k], std::vector<double>{zk[0], zk[1], t});
          }
          neso[p].push_back(prod);
        }
      }
      t_neso += seconds_since(t0);

      t0 = Clock::now();
      PdeGrid pg;
      pg.points = {o.pde_points, o.pde_points};
      pg.time_slices = o.pde_slices;
      std::vector<GridSolution> sols;
      for (std::size_t k = 0; k < modes.size(); ++k) {
        sols.push_back(solve_subsystem_pde(spec.beta1 + modes[k].lambda, beta2, spec.sigma, alpha[k], pg, horizon));
      }
      for (int p = 0; p < o.probes; ++p) {
        for (double t : o.probe_times) pde[p].push_back(product_safety(sols, modes, x0[p], t));
      }
      t_pde += seconds_since(t0);

      t0 = Clock::now();
      const auto full = full_network_system(spec);
      for (int p = 0; p < o.probes; ++p) {
        const auto curve = mc_curve(full, x0[p], o.probe_times, o.mc_trajectories, o.mc_dt,
                                    substream_seed(o.seed + 1, static_cast<std::uint64_t>(inst * o.probes + p)));
        for (const auto& r : curve) mc[p].push_back(r.estimate);
      }
      t_mc += seconds_since(t0);
    } else {
      const std::uint64_t sys_seed = substream_seed(o.seed, static_cast<std::uint64_t>(inst));
      const auto system = random_sine_dynamics(sys_seed);
      const Interval xs = system.domain[0];
      for (int p = 0; p < o.probes; ++p) x0[p] = {xs.lo + 1.0 + (xs.width() - 1.5) * u01(rng)};

      auto t0 = Clock::now();
      const auto in = sample_input(system, grid, time);
      const auto tape = net.forward(c.params, in, system.icbc());
      const bool baseline = c.params.config.readout == Readout::Grid;
      std::optional<ControlTensor> surface;
      if (!baseline) surface = net.control_tensor(tape);
      for (int p = 0; p < o.probes; ++p) {
        for (double t : o.probe_times) {
          const std::vector<double> pt{x0[p][0], t};
          neso[p].push_back(baseline ? grid_value(tape.output, grid, in.domain, pt) : eval_value(*surface, pt));
        }
      }
      t_neso += seconds_since(t0);

      t0 = Clock::now();
      PdeGrid pg;
      pg.points = {o.pde_points};
      pg.time_slices = o.pde_slices;
      const auto sol = solve_pde(system, pg, horizon);
      for (int p = 0; p < o.probes; ++p) {
        for (double t : o.probe_times) pde[p].push_back(sol.interpolate(x0[p], t));
      }
      t_pde += seconds_since(t0);

      t0 = Clock::now();
      for (int p = 0; p < o.probes; ++p) {
        const auto curve = mc_curve(system, x0[p], o.probe_times, o.mc_trajectories, o.mc_dt,
                                    substream_seed(o.seed + 1, static_cast<std::uint64_t>(inst * o.probes + p)));
        for (const auto& r : curve) mc[p].push_back(r.estimate);
      }
      t_mc += seconds_since(t0);
    }

    for (int p = 0; p < o.probes; ++p) {
      for (std::size_t j = 0; j < o.probe_times.size(); ++j) {
        res.probes.push_back({inst, p, o.probe_times[j], neso[p][j], pde[p][j], mc[p][j]});
      }
    }
  }
  res.rows = {{"neso", o.instances, t_neso}, {"pde", o.instances, t_pde}, {"mc", o.instances, t_mc}};
  const double n = o.instances;
  res.crossover_pde = crossover(res.train_seconds, t_neso / n, t_pde / n);
  res.crossover_mc = crossover(res.train_seconds, t_neso / n, t_mc / n);
  return res;
}

void write_benchmark_csv(std::ostream& os, const BenchmarkResult& r) {
  os << "method,n_systems,seconds\n";
  for (const auto& row : r.rows) os << row.method << ',' << row.n_systems << ',' << format_double(row.seconds) << '\n';
}

BenchmarkResult cmd_benchmark(const KeyValues& config, const fs::path& out) {
  const fs::path ckpt = config.require_string("checkpoint");
  const auto o = BenchmarkOptions::from_key_values(config);
  const Checkpoint c = load_checkpoint(ckpt);
  const auto res = run_benchmark(c, o);
  make_fresh_dir(out);
  KeyValues echo = o.to_key_values();
  echo.set("checkpoint", ckpt.string());
  echo.set("train_seconds", format_double(res.train_seconds));
  write_text(out / "config.txt", echo);
  {
    auto os = open_out(out / "benchmark.csv");
    write_benchmark_csv(os, res);
  }
  {
    auto os = open_out(out / "crossover.csv");
    os << "baseline,train_seconds,neso_per_system,baseline_per_system,n_star\n";
    const double n = res.row("neso").n_systems;
    for (const auto& [name, cross] : {std::pair{"pde", res.crossover_pde}, std::pair{"mc", res.crossover_mc}}) {
      os << name << ',' << format_double(res.train_seconds) << ',' << format_double(res.row("neso").seconds / n)
         << ',' << format_double(res.row(name).seconds / n) << ',' << (cross ? std::to_string(*cross) : "inf")
         << '\n';
    }
  }
  auto os = open_out(out / "probabilities.csv");
  os << "instance,probe,t,neso,pde,mc\n";
  for (const auto& p : res.probes) {
    os << p.instance << ',' << p.probe << ',' << format_double(p.t) << ',' << format_double(p.neso) << ','
       << format_double(p.pde) << ',' << format_double(p.mc) << '\n';
  }
  return res;
}

double cmd_project(const KeyValues& config, const fs::path& out) {
  const std::string field = config.get_string("field", "sin2pi");
  KeyValues echo;
  echo.set("field", field);
  ScalarField target;
  std::vector<Interval> domain;
  std::optional<GridSolution> grid;
  if (field == "sin2pi") {
    domain = {{0.0, 1.0}, {0.0, 1.0}};
    target = [](std::span<const double> u) { return std::sin(2 * std::numbers::pi * u[0]) * (1.0 + u[1]); };
  } else if (field == "recovery-truth") {
    const auto seed = config.get_u64("system_seed", 0);
    echo.set("system_seed", std::to_string(seed));
    const auto system = random_sine_dynamics(seed);
    const auto drift = std::get<SineDrift>(system.drift);
    const double horizon = config.get_double("horizon", 10.0);
    echo.set("horizon", format_double(horizon));
    domain = {system.domain[0], {0.0, horizon}};
    target = [drift](std::span<const double> u) { return recovery_truth(drift, u[0], u[1]); };
  } else {
    grid = from_array_file(load_array_file(field), parse_kind(config.get_string("kind", "safety")));
    domain = grid->domain;
    domain.push_back({grid->times.front(), grid->times.back()});
    target = [&grid](std::span<const double> u) {
      return grid->interpolate(u.first(u.size() - 1), u.back());
    };
  }
  const std::size_t q = domain.size();
  auto counts = to_ints(config.get_doubles("counts", std::vector<double>(q, 16.0)));
  auto orders = to_ints(config.get_doubles("orders", std::vector<double>(q, 3.0)));
  if (counts.size() != q || orders.size() != q) {
    throw Error(ErrorKind::Configuration, "counts and orders need one entry per axis");
  }
  const int pps = static_cast<int>(config.get_int("points_per_span", 4));
  echo.set("counts", join_ints(counts));
  echo.set("orders", join_ints(orders));
  echo.set("points_per_span", std::to_string(pps));
  const auto c = l2_project(target, make_basis(counts, orders, domain), pps);
  const double residual = l2_residual(target, c, pps);
  make_fresh_dir(out);
  write_text(out / "config.txt", echo);
  {
    auto os = open_out(out / "control.arr");
    write_control_tensor(os, c);
  }
  KeyValues summary;
  summary.set("l2_residual", format_double(residual));
  write_text(out / "summary.txt", summary);
  return residual;
}

}  // namespace neso
