#pragma once

// Commands behind the `neso` executable. Every command reads a key-value
// config, writes into a fresh output directory and echoes the resolved
// config there as config.txt.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "neso/io.hpp"
#include "neso/neural_functional.hpp"
#include "neso/pde_oracle.hpp"
#include "neso/training.hpp"

namespace neso {

/// Creates `dir`; refuses an existing non-empty directory.
void make_fresh_dir(const std::filesystem::path& dir);

/// Keys: case (sine-recovery | multi-agent-mode), split, seed, count or
/// systems, input_grid, horizon, plus the per-case generator options.
/// `resolved` receives every option actually used.
Dataset generate_dataset(const KeyValues& config, KeyValues& resolved);
Dataset cmd_gen_data(const KeyValues& config, const std::filesystem::path& out);

/// TrainConfig keys plus `data` (dataset directory) and optional
/// `validation` (dataset directory whose records join as validation).
TrainResult cmd_train(const KeyValues& config, const std::filesystem::path& out);

struct RecordMetrics {
  std::size_t record = 0;
  std::size_t points = 0;
  Metrics metrics;
};

struct Evaluation {
  std::vector<RecordMetrics> records;
  Metrics summary;  // pooled over every evaluated point
};

/// Throws kind-mismatch when checkpoint and dataset problem kinds differ.
/// Without `split` every record is evaluated.
Evaluation evaluate(const Checkpoint& c, const Dataset& d, std::optional<Split> split = {});
/// Columns record,points,mse,mae,rel_err; last row is the summary ("all").
void write_metrics_csv(std::ostream& os, const Evaluation& e);
Evaluation cmd_eval(const KeyValues& config, const std::filesystem::path& out);

/// Surrogate field of one system on a uniform evaluation grid. Keys:
/// checkpoint, source (sine | mode), system_seed or (beta2, lambda, alpha),
/// grid (nodes per state axis, then time).
GridSolution cmd_predict(const KeyValues& config, const std::filesystem::path& out);

struct BenchmarkOptions {
  int instances = 3;
  std::uint64_t seed = 1000;
  int probes = 5;
  std::vector<double> probe_times{1.0, 2.5, 5.0, 7.5, 10.0};
  int pde_points = 41;  // per state axis
  int pde_slices = 20;
  std::int64_t mc_trajectories = 1000;
  double mc_dt = 1e-2;
  double train_seconds = -1.0;  // < 0: read from the checkpoint

  static BenchmarkOptions from_key_values(const KeyValues& kv);
  KeyValues to_key_values() const;
};

struct BenchmarkRow {
  std::string method;
  int n_systems = 0;
  double seconds = 0.0;
};

struct BenchmarkProbe {
  int instance = 0;
  int probe = 0;
  double t = 0.0;
  double neso = 0.0;
  double pde = 0.0;
  double mc = 0.0;
};

struct BenchmarkResult {
  std::vector<BenchmarkRow> rows;  // neso, pde, mc
  std::vector<BenchmarkProbe> probes;
  double train_seconds = 0.0;
  /// Smallest n with train + n * neso < n * baseline; nullopt when the
  /// baseline is not slower per system.
  std::optional<long> crossover_pde;
  std::optional<long> crossover_mc;

  const BenchmarkRow& row(const std::string& method) const;
};

/// Times NeSO inference, PDE solves and Monte Carlo on the same unseen
/// instances. Case 1: one sine system per instance. Case 2: one 7-agent
/// network per instance (7 mode surrogates or 7 mode PDE solves combined by
/// the mode product, against a 14-dimensional Monte Carlo).
BenchmarkResult run_benchmark(const Checkpoint& c, const BenchmarkOptions& o);
/// Columns method,n_systems,seconds.
void write_benchmark_csv(std::ostream& os, const BenchmarkResult& r);
BenchmarkResult cmd_benchmark(const KeyValues& config, const std::filesystem::path& out);

/// crossover n* = floor(train / (baseline - neso)) + 1 per system, if positive.
std::optional<long> crossover(double train_seconds, double neso_per_system,
                              double baseline_per_system);

/// l2_project diagnostics. Keys: field (recovery-truth | sin2pi | path to a
/// grid array file), system_seed, counts, orders, points_per_span. Returns
/// the L2 residual; writes control.arr and summary.txt.
double cmd_project(const KeyValues& config, const std::filesystem::path& out);

}  // namespace neso
