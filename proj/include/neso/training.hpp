#pragma once

// Physics residual, losses, collocation, Adam and the training loop.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "neso/io.hpp"
#include "neso/neural_functional.hpp"
#include "neso/stochastic_oracle.hpp"
#include "neso/surrogate.hpp"

namespace neso {

/// W = dF/dt - f . grad F - 1/2 sum_k sigma_k^2 d2F/dx_k^2.
double pde_residual(const SurfacePoint& partials, std::span<const double> f,
                    std::span<const double> sigma);

/// Sparse linear functional sum_i weight[i] * out[index[i]].
struct LinearForm {
  std::vector<std::size_t> index;
  std::vector<double> weight;

  double apply(std::span<const double> out) const;
  void accumulate(double scale, std::span<double> grad) const;
};

/// W at `point` as a linear form over the control tensor of `basis`.
LinearForm residual_form(const BasisSpec& basis, const SystemSpec& system,
                         std::span<const double> point);
/// Surface value at `point` as a linear form over the control tensor.
LinearForm value_form(const BasisSpec& basis, std::span<const double> point);

/// Mean of W^2 over `points` for a fixed surface.
double physics_loss(const ControlTensor& c, const SystemSpec& system,
                    std::span<const std::vector<double>> points);

/// Uniform points strictly inside the basis box, one knot span clear of every
/// state face and of t = 0. Deterministic per seed.
std::vector<std::vector<double>> sample_collocation(const BasisSpec& basis, int count,
                                                    std::uint64_t seed);

struct AdamHyper {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;

  static AdamState zeros(std::size_t n);
};

/// Bias-corrected Adam update in place. Throws training-diverged on a
/// non-finite gradient, naming the first offending index.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               const AdamHyper& hyper);

enum class Split { Train, Validation, Test };
std::string split_name(Split s);
Split parse_split(const std::string& name);

/// Scalar sine recovery system drawn from `seed`.
struct SineSource {
  std::uint64_t seed = 0;
};

/// Mode k of a multi-agent system with the given parameters.
struct ModeSource {
  int system = 0;
  int mode = 0;
  double beta1 = 1.0;
  double beta2 = 1.0;
  double lambda = 0.0;
  double alpha = 1.0;
  double sigma = 0.2;
};

using RecordSource = std::variant<SineSource, ModeSource>;

struct Record {
  RecordSource source;
  SystemSpec system;
  InputField input;
  Icbc icbc;
  std::vector<std::vector<double>> points;  // (x..., t)
  std::vector<double> targets;
  Split split = Split::Train;
};

struct Dataset {
  std::string name;  // "sine-recovery" or "multi-agent-mode"
  ProblemKind kind = ProblemKind::Safety;
  double horizon = 10.0;
  std::vector<Record> records;

  std::vector<std::size_t> indices(Split split) const;
};

/// Rebuilds system, input and ICBC of a record from its source.
void materialize(Record& r, std::span<const int> input_grid, double horizon);

struct SineDatasetOptions {
  int count = 10;
  std::uint64_t seed = 0;
  std::vector<int> input_grid{32, 32};
  int eval_x = 29;  // evaluation nodes on [-10, 4]
  int eval_t = 21;  // evaluation nodes on [0, horizon]
  double horizon = 10.0;
  int truth_panels = 4096;
};

/// Systems drawn from substream_seed(seed, i); targets from recovery_truth.
Dataset make_sine_dataset(const SineDatasetOptions& options, Split split);

struct ModeDatasetOptions {
  int systems = 20;
  std::uint64_t seed = 0;
  std::vector<int> input_grid{8, 8, 8};
  double beta2_lo = 0.5, beta2_hi = 2.0;
  double alpha_lo = 1.0, alpha_hi = 2.0;
  double sigma = 0.2;
  double horizon = 10.0;
  int pde_points = 41;
  int pde_slices = 20;
  std::vector<int> sample_grid{11, 11, 11};
};

/// Per system: beta2 ~ U(beta2_lo, beta2_hi), alpha_k ~ U(alpha_lo, alpha_hi)
/// for each Laplacian mode; one record per mode with solve_subsystem_pde
/// targets on sample_grid nodes.
Dataset make_mode_dataset(const ModeDatasetOptions& options, Split split);

/// Directory layout: manifest.txt (key = value: schema, counts, grids,
/// per-record source parameters, split, byte offset and length) and
/// records.bin (per record an "input" then a "samples" array file; samples
/// rows are (x..., t, target)). `generator` is echoed into the manifest.
void save_dataset(const std::filesystem::path& dir, const Dataset& d, const KeyValues& generator);
Dataset load_dataset(const std::filesystem::path& dir);

/// Multilinear interpolation of a baseline grid output as a linear form.
LinearForm grid_value_form(std::span<const int> grid, std::span<const Interval> domain,
                           std::span<const double> point);

struct TrainConfig {
  double w_p = 1.0;
  double w_d = 3.0;
  double w_icbc = 10.0;  // baseline arm only
  int epochs = 500;
  AdamHyper adam;
  int collocation = 256;
  std::uint64_t seed = 0;             // parameter init and batch order
  std::uint64_t collocation_seed = 1;
  int batch_size = 0;  // 0: full batch
  ArchConfig arch;

  bool baseline() const { return arch.readout == Readout::Grid; }
  void validate() const;
  KeyValues to_key_values() const;
  static TrainConfig from_key_values(const KeyValues& kv);
};

struct LossParts {
  double total = 0.0;
  double physics = 0.0;
  double data = 0.0;
  double icbc = 0.0;
};

/// L = w_p L_p + w_d L_d (+ w_icbc L_icbc for the baseline).
double combine_losses(const LossParts& parts, const TrainConfig& config);

/// Per-record linear forms assembled once before training.
struct PreparedRecord {
  std::vector<LinearForm> data;
  std::vector<double> targets;
  std::vector<LinearForm> residual;
  std::vector<LinearForm> icbc;  // baseline only
  std::vector<double> icbc_targets;
};

PreparedRecord prepare_record(const Record& r, const TrainConfig& config);

/// Losses over `batch` and, when `grad` is nonempty, their parameter gradient.
LossParts total_loss(const NeuralFunctional& net, const FunctionalParams& params,
                     const Dataset& data, std::span<const PreparedRecord> prepared,
                     std::span<const std::size_t> batch, const TrainConfig& config,
                     std::span<double> grad = {});

struct HistoryRow {
  int epoch = 0;
  LossParts loss;
  double validation = 0.0;
  double wall_ms = 0.0;
};

struct TrainResult {
  Checkpoint best;
  Checkpoint last;
  std::vector<HistoryRow> history;
  double seconds = 0.0;
};

struct TrainOptions {
  std::filesystem::path run_dir;  // empty: nothing written
  bool resume = false;
  int save_every = 1;  // run_dir files are written every k epochs and after the last
  std::function<void(const HistoryRow&)> on_epoch;
};

/// Best checkpoint minimizes the validation data MSE when validation records
/// exist, else the training loss. With a run_dir, writes best.ckpt,
/// last.ckpt, last.adam and history.csv every save_every epochs; resume
/// continues from last.* bit-exactly.
TrainResult train(const TrainConfig& config, const Dataset& data,
                  const TrainOptions& options = {});

void write_history_csv(std::ostream& os, std::span<const HistoryRow> rows);

/// Prediction of a trained functional for record r at its own points.
std::vector<double> predict_points(const FunctionalParams& params, const Record& r,
                                   std::span<const std::vector<double>> points);

struct Metrics {
  double mse = 0.0;
  double mae = 0.0;
  double rel_err = 0.0;  // mean |F - F^| / max(|F|, 0.05)
};

Metrics compute_metrics(std::span<const double> truth, std::span<const double> prediction);

}  // namespace neso
