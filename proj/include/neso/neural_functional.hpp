#pragma once

// Coefficient neural functional: sampled dynamics on a uniform grid ->
// lift -> spectral blocks -> pointwise readout -> control tensor, with a
// hand-written reverse pass.
//
// Activations are stored channel-major: entry (c, n) of an N x W field lives
// at c * N + n, with n the row-major index over the feature grid.

#include <complex>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "neso/io.hpp"
#include "neso/spline_basis.hpp"
#include "neso/stochastic_oracle.hpp"
#include "neso/surrogate.hpp"

namespace neso {

/// Input channels sampled on a uniform grid over `domain` (state axes, then
/// time); values[c * N + n].
struct InputField {
  std::vector<int> grid;
  std::vector<Interval> domain;
  int channels = 0;
  std::vector<double> values;

  std::size_t nodes() const;
};

/// Finite safe-box bounds of the system in axis order (lo before hi).
std::vector<double> safe_set_parameters(const SystemSpec& system);

/// Channels f_1..f_n at every (x, t) node, then the time integrals
/// int_0^t f_k(x, s) ds (trapezoid, 8 panels per time cell), then one
/// constant channel per safe set parameter. Throws invalid-system on
/// non-finite drift samples.
InputField sample_input(const SystemSpec& system, std::span<const int> grid, Interval time);

/// Constant channels (beta2, lambda, alpha) on [-alpha, alpha]^2 x time.
InputField mode_input(double beta2, double lambda, double alpha, std::span<const int> grid,
                      Interval time);

enum class Readout {
  Affine,  // control points are the resampled readout
  Hazard,  // control points are 1 - exp(-S) (Recovery) or exp(-S) (Safety),
           // S the running sum of softplus(readout) along time
  Grid,    // no spline: the readout grid is the prediction (baseline arm)
};

std::string readout_name(Readout r);
Readout parse_readout(const std::string& name);

struct ArchConfig {
  int width = 32;
  int blocks = 3;
  int modes = 8;
  std::vector<int> grid;  // feature grid per axis, last axis time
  int in_channels = 0;    // sampled channels; normalized grid coordinates are appended
  Readout readout = Readout::Hazard;
  std::vector<int> control_counts;  // spline arms only
  std::vector<int> control_orders;

  void validate() const;
  std::size_t nodes() const;
  int lifted_channels() const { return in_channels + static_cast<int>(grid.size()); }
  /// Output length: control tensor size, or grid nodes for the baseline.
  std::size_t output_size() const;
  BasisSpec basis(std::span<const Interval> domain) const;
};

/// One named parameter tensor inside the flat parameter vector.
struct ParamTensor {
  std::string name;
  std::size_t offset = 0;
  std::size_t size = 0;
};

struct FunctionalParams {
  ArchConfig config;
  std::vector<ParamTensor> tensors;  // manifest order
  std::vector<double> data;

  const ParamTensor& tensor(const std::string& name) const;
  std::span<double> view(const std::string& name);
  std::span<const double> view(const std::string& name) const;
};

/// Zero-valued parameters laid out for `config`.
FunctionalParams zero_params(const ArchConfig& config);

/// Pointwise weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); spectral weights
/// complex Gaussian with E|w|^2 = 1/width^4; biases zero.
FunctionalParams init_params(std::uint64_t seed, const ArchConfig& config);

/// Truncated separable DFT over a grid: kept frequencies are the lowest
/// `modes` of each sign on leading axes and 0..modes-1 on the last axis.
class SpectralTransform {
 public:
  SpectralTransform(std::span<const int> grid, int modes);

  std::size_t modes_size() const noexcept { return modes_size_; }
  std::size_t nodes() const noexcept { return nodes_; }

  /// z[c, k] = sum_n x[c, n] exp(-i theta_k(n)), for `channels` fields.
  void analysis(std::span<const double> x, int channels, std::span<std::complex<double>> z) const;
  /// y[c, n] = Re sum_k z[c, k] exp(i theta_k(n)).
  void synthesis(std::span<const std::complex<double>> z, int channels, std::span<double> y) const;
  /// c_k / N: 1 for self-conjugate last-axis frequencies, 2 otherwise.
  std::span<const double> scale() const noexcept { return scale_; }

 private:
  std::vector<int> grid_;
  std::vector<int> kept_;  // kept frequency count per axis
  std::vector<std::vector<std::complex<double>>> forward_;  // kept_a x grid_a per axis
  std::vector<double> scale_;
  std::size_t nodes_ = 0;
  std::size_t modes_size_ = 0;
};

/// Intermediate values of one forward pass, consumed by backward.
struct Tape {
  std::vector<double> lifted_input;             // N x (in + q)
  std::vector<std::vector<double>> block_in;    // per block, N x W
  std::vector<std::vector<double>> block_pre;   // per block, before GELU
  std::vector<std::vector<std::complex<double>>> block_spectrum;  // W x S
  std::vector<double> final_features;           // N x W
  std::vector<double> readout;                  // N
  std::vector<double> raw_control;              // resampled readout, control shape
  std::vector<double> output;                   // control values or baseline grid
  Icbc icbc;
  std::vector<Interval> domain;
};

class NeuralFunctional {
 public:
  explicit NeuralFunctional(const ArchConfig& config);

  const ArchConfig& config() const noexcept { return config_; }

  Tape forward(const FunctionalParams& params, const InputField& input, const Icbc& icbc) const;
  /// All state faces on the safe-set boundary.
  Tape forward(const FunctionalParams& params, const InputField& input, ProblemKind kind) const;
  /// Control tensor of a spline-arm forward pass (ICBC already applied).
  ControlTensor control_tensor(const Tape& tape) const;
  /// Gradient of the loss w.r.t. every parameter, given d loss / d output.
  /// Clamped control entries receive no gradient.
  std::vector<double> backward(const FunctionalParams& params, const Tape& tape,
                               std::span<const double> upstream) const;

 private:
  void check_input(const InputField& input) const;

  ArchConfig config_;
  SpectralTransform dft_;
  std::vector<std::vector<double>> resample_;  // control count x grid, per axis
};

/// Convenience: forward then control_tensor.
ControlTensor predict_control(const FunctionalParams& params, const InputField& input,
                              const Icbc& icbc);

/// Multilinear value of a baseline grid output at point (x..., t).
double grid_value(std::span<const double> grid_values, std::span<const int> grid,
                  std::span<const Interval> domain, std::span<const double> point);

/// Checkpoint: "neso-checkpoint v1", `key = value` manifest lines (config,
/// seed, problem kind, tensor table), "data <N>", then N little-endian
/// float64 values in manifest order.
struct Checkpoint {
  FunctionalParams params;
  ProblemKind kind = ProblemKind::Safety;
  std::uint64_t seed = 0;
  KeyValues extra;  // free-form metadata (training state, dataset)
};

void write_checkpoint(std::ostream& os, const Checkpoint& c);
Checkpoint read_checkpoint(std::istream& is);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string kind_name(ProblemKind kind);
ProblemKind parse_kind(const std::string& name);

}  // namespace neso
