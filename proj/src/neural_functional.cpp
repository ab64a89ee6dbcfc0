#include "neso/neural_functional.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "neso/error.hpp"
#include "neso/tensor.hpp"

namespace neso {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatrixC =
    Eigen::Matrix<std::complex<double>, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Cplx = std::complex<double>;

constexpr double kInvSqrt2 = std::numbers::sqrt2 / 2.0;
constexpr const char* kCheckpointMagic = "neso-checkpoint v1";
constexpr int kDriftSubsteps = 8;  // trapezoid panels per input time cell

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
  const double pdf = std::exp(-0.5 * x * x) * 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
  return cdf + x * pdf;
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

std::string join_ints(std::span<const int> v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? " " : "") + std::to_string(v[i]);
  return out;
}

std::vector<int> to_ints(const std::vector<double>& v) {
  std::vector<int> out;
  for (double d : v) out.push_back(static_cast<int>(std::lround(d)));
  return out;
}

std::string block_name(int b, const char* part) { return "block" + std::to_string(b) + "." + part; }

// Applies per-axis matrices (rows_a x cols_a) to a row-major tensor.
std::vector<double> apply_separable(std::span<const double> in, std::vector<int> shape,
                                    const std::vector<std::vector<double>>& matrices,
                                    const std::vector<int>& rows) {
  std::vector<double> cur(in.begin(), in.end());
  for (std::size_t a = 0; a < shape.size(); ++a) {
    std::vector<int> out_shape = shape;
    out_shape[a] = rows[a];
    std::vector<double> next(product(out_shape));
    apply_along_axis<double, double, double>(cur, shape, a, matrices[a], rows[a], next);
    cur = std::move(next);
    shape = std::move(out_shape);
  }
  return cur;
}

std::vector<double> transpose(const std::vector<double>& m, int rows, int cols) {
  std::vector<double> t(m.size());
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) t[static_cast<std::size_t>(c) * rows + r] = m[static_cast<std::size_t>(r) * cols + c];
  }
  return t;
}

}  // namespace

std::size_t InputField::nodes() const { return product(grid); }

std::vector<double> safe_set_parameters(const SystemSpec& system) {
  std::vector<double> out;
  for (const auto& b : system.safe_box) {
    if (std::isfinite(b.lo)) out.push_back(b.lo);
    if (std::isfinite(b.hi)) out.push_back(b.hi);
  }
  return out;
}

InputField sample_input(const SystemSpec& system, std::span<const int> grid, Interval time) {
  system.validate();
  const std::size_t n = system.dims();
  if (grid.size() != n + 1) throw Error(ErrorKind::Configuration, "input grid must cover state and time");
  for (int m : grid) {
    if (m < 2) throw Error(ErrorKind::Configuration, "input grid needs >= 2 nodes per axis");
  }
  InputField in;
  in.grid.assign(grid.begin(), grid.end());
  in.domain = system.domain;
  in.domain.push_back(time);
  const auto params = safe_set_parameters(system);
  in.channels = static_cast<int>(2 * n + params.size());
  const std::size_t nodes = in.nodes();
  in.values.assign(nodes * in.channels, 0.0);
  const int mt = grid[n];
  const double h = time.width() / (mt - 1) / kDriftSubsteps;
  std::vector<double> x(n), f(n), g(n), acc(n);
  auto sample = [&](double t, std::vector<double>& out) {
    system.drift_at(x, t, out);
    for (double v : out) {
      if (!std::isfinite(v)) throw Error(ErrorKind::InvalidSystem, "non-finite drift sample");
    }
  };
  // Time is the fastest axis: each run of mt nodes shares one state x.
  std::size_t flat = 0;
  for_each_index(in.grid, [&](std::span<const int> idx) {
    for (std::size_t a = 0; a < n; ++a) {
      x[a] = in.domain[a].lo + in.domain[a].width() * idx[a] / (grid[a] - 1);
    }
    const double t = time.lo + time.width() * idx[n] / (grid[n] - 1);
    if (idx[n] == 0) {
      std::fill(acc.begin(), acc.end(), 0.0);
    } else {
      // Trapezoid over the substeps of (t_prev, t].
      for (int k = 0; k < kDriftSubsteps; ++k) {
        const double a = t - h * (kDriftSubsteps - k);
        sample(a, f);
        sample(a + h, g);
        for (std::size_t c = 0; c < n; ++c) acc[c] += 0.5 * h * (f[c] + g[c]);
      }
    }
    sample(t, f);
    for (std::size_t c = 0; c < n; ++c) {
      in.values[c * nodes + flat] = f[c];
      in.values[(n + c) * nodes + flat] = acc[c];
    }
    ++flat;
  });
  for (std::size_t p = 0; p < params.size(); ++p) {
    std::fill_n(in.values.begin() + (2 * n + p) * nodes, nodes, params[p]);
  }
  return in;
}

InputField mode_input(double beta2, double lambda, double alpha, std::span<const int> grid,
                      Interval time) {
  if (grid.size() != 3) throw Error(ErrorKind::Configuration, "mode input grid is (p, v, t)");
  if (!(alpha > 0.0)) throw Error(ErrorKind::InvalidSystem, "mode threshold must be > 0");
  InputField in;
  in.grid.assign(grid.begin(), grid.end());
  in.domain = {{-alpha, alpha}, {-alpha, alpha}, time};
  in.channels = 3;
  const std::size_t nodes = in.nodes();
  in.values.resize(3 * nodes);
  std::fill_n(in.values.begin(), nodes, beta2);
  std::fill_n(in.values.begin() + nodes, nodes, lambda);
  std::fill_n(in.values.begin() + 2 * nodes, nodes, alpha);
  return in;
}

std::string readout_name(Readout r) {
  switch (r) {
    case Readout::Affine: return "affine";
    case Readout::Hazard: return "hazard";
    case Readout::Grid: return "grid";
  }
  return "affine";
}

Readout parse_readout(const std::string& name) {
  if (name == "affine") return Readout::Affine;
  if (name == "hazard") return Readout::Hazard;
  if (name == "grid") return Readout::Grid;
  throw Error(ErrorKind::Configuration, "unknown readout '" + name + "'");
}

std::string kind_name(ProblemKind kind) { return kind == ProblemKind::Safety ? "safety" : "recovery"; }

ProblemKind parse_kind(const std::string& name) {
  if (name == "safety") return ProblemKind::Safety;
  if (name == "recovery") return ProblemKind::Recovery;
  throw Error(ErrorKind::Configuration, "unknown problem kind '" + name + "'");
}

void ArchConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorKind::Configuration, m); };
  if (width < 1 || blocks < 1 || modes < 1) fail("width, blocks and modes must be >= 1");
  if (grid.size() < 2) fail("feature grid needs a state axis and a time axis");
  for (int m : grid) {
    if (m < 2) fail("feature grid needs >= 2 nodes per axis");
  }
  if (in_channels < 1) fail("in_channels must be >= 1");
  if (readout != Readout::Grid) {
    if (control_counts.size() != grid.size() || control_orders.size() != grid.size()) {
      fail("control counts and orders must match the grid rank");
    }
  }
}

std::size_t ArchConfig::nodes() const { return product(grid); }

std::size_t ArchConfig::output_size() const {
  return readout == Readout::Grid ? nodes() : product(control_counts);
}

BasisSpec ArchConfig::basis(std::span<const Interval> domain) const {
  return make_basis(control_counts, control_orders, domain);
}

const ParamTensor& FunctionalParams::tensor(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t;
  }
  throw Error(ErrorKind::Configuration, "no parameter tensor '" + name + "'");
}

std::span<double> FunctionalParams::view(const std::string& name) {
  const auto& t = tensor(name);
  return std::span<double>(data).subspan(t.offset, t.size);
}

std::span<const double> FunctionalParams::view(const std::string& name) const {
  const auto& t = tensor(name);
  return std::span<const double>(data).subspan(t.offset, t.size);
}

FunctionalParams zero_params(const ArchConfig& config) {
  config.validate();
  const SpectralTransform dft(config.grid, config.modes);
  const std::size_t w = config.width;
  FunctionalParams p;
  p.config = config;
  std::size_t offset = 0;
  auto add = [&](std::string name, std::size_t size) {
    p.tensors.push_back({std::move(name), offset, size});
    offset += size;
  };
  add("lift.weight", w * config.lifted_channels());
  add("lift.bias", w);
  for (int b = 0; b < config.blocks; ++b) {
    add(block_name(b, "spectral"), w * w * dft.modes_size() * 2);
    add(block_name(b, "bypass.weight"), w * w);
    add(block_name(b, "bypass.bias"), w);
  }
  add("readout.weight", w);
  add("readout.bias", 1);
  p.data.assign(offset, 0.0);
  return p;
}

FunctionalParams init_params(std::uint64_t seed, const ArchConfig& config) {
  FunctionalParams p = zero_params(config);
  std::mt19937_64 rng(seed);
  auto uniform = [&](std::span<double> v, int fan_in) {
    const double r = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-r, r);
    for (double& x : v) x = u(rng);
  };
  uniform(p.view("lift.weight"), config.lifted_channels());
  const double w2 = static_cast<double>(config.width) * config.width;
  std::normal_distribution<double> normal(0.0, kInvSqrt2 / w2);
  for (int b = 0; b < config.blocks; ++b) {
    for (double& x : p.view(block_name(b, "spectral"))) x = normal(rng);
    uniform(p.view(block_name(b, "bypass.weight")), config.width);
  }
  uniform(p.view("readout.weight"), config.width);
  return p;
}

SpectralTransform::SpectralTransform(std::span<const int> grid, int modes)
    : grid_(grid.begin(), grid.end()) {
  if (grid_.empty() || modes < 1) throw Error(ErrorKind::Configuration, "invalid spectral layout");
  const std::size_t q = grid_.size();
  nodes_ = product(grid_);
  modes_size_ = 1;
  for (std::size_t a = 0; a < q; ++a) {
    const int m = grid_[a];
    std::vector<int> freq;
    if (a + 1 == q) {
      for (int k = 0; k < std::min(modes, m / 2 + 1); ++k) freq.push_back(k);
    } else if (2 * modes <= m) {
      for (int k = 0; k < modes; ++k) freq.push_back(k);
      for (int k = m - modes; k < m; ++k) freq.push_back(k);
    } else {
      for (int k = 0; k < m; ++k) freq.push_back(k);
    }
    kept_.push_back(static_cast<int>(freq.size()));
    modes_size_ *= freq.size();
    std::vector<Cplx> f(freq.size() * m);
    for (std::size_t r = 0; r < freq.size(); ++r) {
      for (int n = 0; n < m; ++n) {
        // Reduce k n mod m before scaling to keep the phase exact.
        const double phase = 2.0 * std::numbers::pi * ((static_cast<long>(freq[r]) * n) % m) / m;
        f[r * m + n] = Cplx(std::cos(phase), -std::sin(phase));
      }
    }
    forward_.push_back(std::move(f));
    if (a + 1 == q) {
      const int kl = kept_.back();
      scale_.resize(modes_size_);
      for (std::size_t s = 0; s < modes_size_; ++s) {
        const int k = static_cast<int>(s % kl);
        const bool self_conjugate = k == 0 || (m % 2 == 0 && k == m / 2);
        scale_[s] = (self_conjugate ? 1.0 : 2.0) / static_cast<double>(nodes_);
      }
    }
  }
}

void SpectralTransform::analysis(std::span<const double> x, int channels,
                                 std::span<Cplx> z) const {
  const std::size_t q = grid_.size();
  const int ml = grid_.back();
  const int kl = kept_.back();
  // Last axis: real rows times the complex DFT matrix.
  const std::size_t rows = static_cast<std::size_t>(channels) * (nodes_ / ml);
  Eigen::Map<const RowMatrix> xm(x.data(), rows, ml);
  Eigen::Map<const RowMatrixC> fl(forward_.back().data(), kl, ml);
  RowMatrixC cur = xm.cast<Cplx>() * fl.transpose();
  // Remaining axes from the back; tensor shape (channels, m_0..m_a, kept_{a+1}..).
  std::size_t post = kl;
  for (std::size_t a = q - 1; a-- > 0;) {
    std::size_t pre = channels;
    for (std::size_t b = 0; b < a; ++b) pre *= grid_[b];
    const int m = grid_[a];
    const int k = kept_[a];
    Eigen::Map<const RowMatrixC> f(forward_[a].data(), k, m);
    Eigen::Map<const RowMatrixC> in(cur.data(), pre * m, post);
    RowMatrixC next(pre * k, post);
    for (std::size_t p = 0; p < pre; ++p) {
      next.middleRows(p * k, k).noalias() = f * in.middleRows(p * m, m);
    }
    cur = std::move(next);
    post *= k;
  }
  std::copy_n(cur.data(), static_cast<std::size_t>(channels) * modes_size_, z.data());
}

void SpectralTransform::synthesis(std::span<const Cplx> z, int channels, std::span<double> y) const {
  const std::size_t q = grid_.size();
  const int ml = grid_.back();
  const int kl = kept_.back();
  // Leading axes first, expanding kept_a -> m_a with the conjugate transpose.
  RowMatrixC cur = Eigen::Map<const RowMatrixC>(z.data(), static_cast<Eigen::Index>(channels) * (modes_size_ / kl), kl);
  std::vector<int> shape(kept_.begin(), kept_.end());  // current sizes along axes
  for (std::size_t a = 0; a + 1 < q; ++a) {
    std::size_t pre = channels;
    for (std::size_t b = 0; b < a; ++b) pre *= grid_[b];
    std::size_t post = 1;
    for (std::size_t b = a + 1; b < q; ++b) post *= shape[b];
    const int m = grid_[a];
    const int k = kept_[a];
    Eigen::Map<const RowMatrixC> f(forward_[a].data(), k, m);
    Eigen::Map<const RowMatrixC> in(cur.data(), pre * k, post);
    RowMatrixC next(pre * m, post);
    for (std::size_t p = 0; p < pre; ++p) {
      next.middleRows(p * m, m).noalias() = f.adjoint() * in.middleRows(p * k, k);
    }
    cur = std::move(next);
    shape[a] = m;
  }
  const std::size_t rows = static_cast<std::size_t>(channels) * (nodes_ / ml);
  Eigen::Map<const RowMatrixC> zl(cur.data(), rows, kl);
  Eigen::Map<const RowMatrixC> fl(forward_.back().data(), kl, ml);
  Eigen::Map<RowMatrix> ym(y.data(), rows, ml);
  const RowMatrix zr = zl.real(), zi = zl.imag(), fr = fl.real(), fi = fl.imag();
  ym.noalias() = zr * fr + zi * fi;
}

NeuralFunctional::NeuralFunctional(const ArchConfig& config)
    : config_(config), dft_(config.grid, config.modes) {
  config_.validate();
  if (config_.readout != Readout::Grid) {
    for (std::size_t a = 0; a < config_.grid.size(); ++a) {
      const auto kv = make_knots(config_.control_counts[a], config_.control_orders[a]);
      const auto g = kv.greville();
      const int m = config_.grid[a];
      std::vector<double> r(g.size() * m, 0.0);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double s = std::clamp(g[i], 0.0, 1.0) * (m - 1);
        const int j = std::min(static_cast<int>(s), m - 2);
        const double w = s - j;
        r[i * m + j] += 1.0 - w;
        r[i * m + j + 1] += w;
      }
      resample_.push_back(std::move(r));
    }
  }
}

void NeuralFunctional::check_input(const InputField& input) const {
  if (input.grid != config_.grid) throw Error(ErrorKind::Configuration, "input grid does not match the architecture");
  if (input.channels != config_.in_channels) {
    throw Error(ErrorKind::Configuration, "input channel count does not match lift weights");
  }
  if (input.domain.size() != config_.grid.size()) throw Error(ErrorKind::Configuration, "input domain rank mismatch");
  if (input.values.size() != input.nodes() * input.channels) {
    throw Error(ErrorKind::Configuration, "input values do not match grid and channels");
  }
}

Tape NeuralFunctional::forward(const FunctionalParams& params, const InputField& input,
                               ProblemKind kind) const {
  return forward(params, input, Icbc::all_boundary(kind, config_.grid.size() - 1));
}

Tape NeuralFunctional::forward(const FunctionalParams& params, const InputField& input,
                               const Icbc& icbc) const {
  check_input(input);
  if (params.data.size() != zero_params(config_).data.size()) {
    throw Error(ErrorKind::Configuration, "parameter vector does not match the architecture");
  }
  const auto n = static_cast<Eigen::Index>(config_.nodes());
  const int w = config_.width;
  const int cin = config_.lifted_channels();
  const std::size_t q = config_.grid.size();
  const std::size_t s = dft_.modes_size();

  Tape tape;
  tape.icbc = icbc;
  tape.domain = input.domain;
  tape.lifted_input.resize(static_cast<std::size_t>(n) * cin);
  std::copy(input.values.begin(), input.values.end(), tape.lifted_input.begin());
  {
    std::size_t flat = 0;
    for_each_index(config_.grid, [&](std::span<const int> idx) {
      for (std::size_t a = 0; a < q; ++a) {
        tape.lifted_input[(input.channels + a) * n + flat] =
            static_cast<double>(idx[a]) / (config_.grid[a] - 1);
      }
      ++flat;
    });
  }

  Eigen::Map<const Eigen::MatrixXd> x0(tape.lifted_input.data(), n, cin);
  Eigen::Map<const RowMatrix> lw(params.view("lift.weight").data(), w, cin);
  Eigen::Map<const Eigen::VectorXd> lb(params.view("lift.bias").data(), w);
  Eigen::MatrixXd h = x0 * lw.transpose();
  h.rowwise() += lb.transpose();

  std::vector<Cplx> mixed(static_cast<std::size_t>(w) * s);
  std::vector<double> spec(static_cast<std::size_t>(n) * w);
  for (int b = 0; b < config_.blocks; ++b) {
    tape.block_in.emplace_back(h.data(), h.data() + h.size());
    auto& xhat = tape.block_spectrum.emplace_back(static_cast<std::size_t>(w) * s);
    dft_.analysis(tape.block_in.back(), w, xhat);
    const auto* wt = reinterpret_cast<const Cplx*>(params.view(block_name(b, "spectral")).data());
    std::fill(mixed.begin(), mixed.end(), Cplx{});
    for (int i = 0; i < w; ++i) {
      const Cplx* xi = xhat.data() + static_cast<std::size_t>(i) * s;
      for (int o = 0; o < w; ++o) {
        const Cplx* wio = wt + (static_cast<std::size_t>(i) * w + o) * s;
        Cplx* yo = mixed.data() + static_cast<std::size_t>(o) * s;
        for (std::size_t k = 0; k < s; ++k) yo[k] += xi[k] * wio[k];
      }
    }
    const auto scale = dft_.scale();
    for (int o = 0; o < w; ++o) {
      for (std::size_t k = 0; k < s; ++k) mixed[o * s + k] *= scale[k];
    }
    dft_.synthesis(mixed, w, spec);

    Eigen::Map<const RowMatrix> bw(params.view(block_name(b, "bypass.weight")).data(), w, w);
    Eigen::Map<const Eigen::VectorXd> bb(params.view(block_name(b, "bypass.bias")).data(), w);
    Eigen::MatrixXd pre = h * bw.transpose();
    pre.rowwise() += bb.transpose();
    pre += Eigen::Map<const Eigen::MatrixXd>(spec.data(), n, w);
    tape.block_pre.emplace_back(pre.data(), pre.data() + pre.size());
    if (b + 1 < config_.blocks) {
      h = pre.unaryExpr([](double v) { return gelu(v); });
    } else {
      h = std::move(pre);
    }
  }
  tape.final_features.assign(h.data(), h.data() + h.size());

  Eigen::Map<const Eigen::VectorXd> rw(params.view("readout.weight").data(), w);
  const double rb = params.view("readout.bias")[0];
  Eigen::VectorXd z = h * rw;
  z.array() += rb;
  tape.readout.assign(z.data(), z.data() + z.size());

  if (config_.readout == Readout::Grid) {
    tape.output = tape.readout;
    return tape;
  }
  tape.raw_control = apply_separable(tape.readout, config_.grid, resample_, config_.control_counts);
  tape.output = tape.raw_control;
  if (config_.readout == Readout::Hazard) {
    const int lt = config_.control_counts.back();
    const std::size_t lines = tape.output.size() / lt;
    const bool safety = icbc.kind == ProblemKind::Safety;
    for (std::size_t r = 0; r < lines; ++r) {
      double sum = 0.0;
      double* c = tape.output.data() + r * lt;
      const double* raw = tape.raw_control.data() + r * lt;
      c[0] = icbc.initial_value();
      for (int j = 1; j < lt; ++j) {
        sum += softplus(raw[j]);
        const double e = std::exp(-sum);
        c[j] = safety ? e : 1.0 - e;
      }
    }
  }
  IcbcClamp(config_.control_counts, icbc).apply(tape.output);
  return tape;
}

ControlTensor NeuralFunctional::control_tensor(const Tape& tape) const {
  if (config_.readout == Readout::Grid) {
    throw Error(ErrorKind::Configuration, "the grid readout has no control tensor");
  }
  return ControlTensor(config_.basis(tape.domain), tape.output);
}

std::vector<double> NeuralFunctional::backward(const FunctionalParams& params, const Tape& tape,
                                               std::span<const double> upstream) const {
  if (upstream.size() != tape.output.size()) {
    throw Error(ErrorKind::Configuration, "upstream gradient does not match the output shape");
  }
  const auto n = static_cast<Eigen::Index>(config_.nodes());
  const int w = config_.width;
  const int cin = config_.lifted_channels();
  const std::size_t s = dft_.modes_size();
  FunctionalParams grad = zero_params(config_);

  std::vector<double> gz;
  if (config_.readout == Readout::Grid) {
    gz.assign(upstream.begin(), upstream.end());
  } else {
    std::vector<double> g(upstream.begin(), upstream.end());
    IcbcClamp(config_.control_counts, tape.icbc).block_gradient(g);
    if (config_.readout == Readout::Hazard) {
      const int lt = config_.control_counts.back();
      const std::size_t lines = g.size() / lt;
      const bool safety = tape.icbc.kind == ProblemKind::Safety;
      for (std::size_t r = 0; r < lines; ++r) {
        double* gc = g.data() + r * lt;
        const double* c = tape.output.data() + r * lt;
        const double* raw = tape.raw_control.data() + r * lt;
        // dC_j/dS_j = -e^{-S_j} (Safety) or e^{-S_j} (Recovery); e^{-S_j} is
        // C_j or 1 - C_j. Clamped entries already carry zero gradient.
        double tail = 0.0;
        for (int j = lt - 1; j >= 1; --j) {
          tail += gc[j] * (safety ? -c[j] : 1.0 - c[j]);
          gc[j] = tail * sigmoid(raw[j]);
        }
        gc[0] = 0.0;
      }
    }
    std::vector<std::vector<double>> rt;
    for (std::size_t a = 0; a < resample_.size(); ++a) {
      rt.push_back(transpose(resample_[a], config_.control_counts[a], config_.grid[a]));
    }
    gz = apply_separable(g, config_.control_counts, rt, config_.grid);
  }

  Eigen::Map<const Eigen::VectorXd> gzv(gz.data(), n);
  Eigen::Map<const Eigen::MatrixXd> hf(tape.final_features.data(), n, w);
  Eigen::Map<Eigen::VectorXd>(grad.view("readout.weight").data(), w) = hf.transpose() * gzv;
  grad.view("readout.bias")[0] = gzv.sum();
  Eigen::Map<const Eigen::VectorXd> rw(params.view("readout.weight").data(), w);
  Eigen::MatrixXd gh = gzv * rw.transpose();

  std::vector<Cplx> gm(static_cast<std::size_t>(w) * s), gx(static_cast<std::size_t>(w) * s);
  std::vector<double> gspec(static_cast<std::size_t>(n) * w);
  for (int b = config_.blocks; b-- > 0;) {
    Eigen::Map<const Eigen::MatrixXd> pre(tape.block_pre[b].data(), n, w);
    Eigen::Map<const Eigen::MatrixXd> hin(tape.block_in[b].data(), n, w);
    Eigen::MatrixXd gpre = gh;
    if (b + 1 < config_.blocks) gpre.array() *= pre.unaryExpr([](double v) { return gelu_grad(v); }).array();

    Eigen::Map<RowMatrix>(grad.view(block_name(b, "bypass.weight")).data(), w, w) =
        gpre.transpose() * hin;
    Eigen::Map<Eigen::VectorXd>(grad.view(block_name(b, "bypass.bias")).data(), w) =
        gpre.colwise().sum().transpose();
    Eigen::Map<const RowMatrix> bw(params.view(block_name(b, "bypass.weight")).data(), w, w);
    gh = gpre * bw;

    dft_.analysis(std::span<const double>(gpre.data(), gpre.size()), w, gm);
    const auto scale = dft_.scale();
    for (int o = 0; o < w; ++o) {
      for (std::size_t k = 0; k < s; ++k) gm[o * s + k] *= scale[k];
    }
    const auto& xhat = tape.block_spectrum[b];
    const auto* wt = reinterpret_cast<const Cplx*>(params.view(block_name(b, "spectral")).data());
    auto* gw = reinterpret_cast<Cplx*>(grad.view(block_name(b, "spectral")).data());
    std::fill(gx.begin(), gx.end(), Cplx{});
    for (int i = 0; i < w; ++i) {
      const Cplx* xi = xhat.data() + static_cast<std::size_t>(i) * s;
      Cplx* gxi = gx.data() + static_cast<std::size_t>(i) * s;
      for (int o = 0; o < w; ++o) {
        const std::size_t base = (static_cast<std::size_t>(i) * w + o) * s;
        const Cplx* go = gm.data() + static_cast<std::size_t>(o) * s;
        for (std::size_t k = 0; k < s; ++k) {
          gw[base + k] = go[k] * std::conj(xi[k]);
          gxi[k] += go[k] * std::conj(wt[base + k]);
        }
      }
    }
    dft_.synthesis(gx, w, gspec);
    gh += Eigen::Map<const Eigen::MatrixXd>(gspec.data(), n, w);
  }

  Eigen::Map<const Eigen::MatrixXd> x0(tape.lifted_input.data(), n, cin);
  Eigen::Map<RowMatrix>(grad.view("lift.weight").data(), w, cin) = gh.transpose() * x0;
  Eigen::Map<Eigen::VectorXd>(grad.view("lift.bias").data(), w) = gh.colwise().sum().transpose();
  return std::move(grad.data);
}

ControlTensor predict_control(const FunctionalParams& params, const InputField& input,
                              const Icbc& icbc) {
  const NeuralFunctional net(params.config);
  return net.control_tensor(net.forward(params, input, icbc));
}

double grid_value(std::span<const double> grid_values, std::span<const int> grid,
                  std::span<const Interval> domain, std::span<const double> point) {
  const std::size_t q = grid.size();
  if (point.size() != q || domain.size() != q) throw Error(ErrorKind::Configuration, "point rank mismatch");
  std::vector<int> base(q);
  std::vector<double> frac(q);
  for (std::size_t a = 0; a < q; ++a) {
    const double slack = 1e-12 * domain[a].width();
    if (!(point[a] >= domain[a].lo - slack && point[a] <= domain[a].hi + slack)) {
      throw Error(ErrorKind::Domain, "point outside the grid domain");
    }
    const double u = std::clamp((point[a] - domain[a].lo) / domain[a].width(), 0.0, 1.0) * (grid[a] - 1);
    base[a] = std::min(static_cast<int>(u), grid[a] - 2);
    frac[a] = u - base[a];
  }
  const auto strides = row_major_strides(grid);
  double out = 0.0;
  for (unsigned corner = 0; corner < (1u << q); ++corner) {
    double weight = 1.0;
    std::size_t flat = 0;
    for (std::size_t a = 0; a < q; ++a) {
      const bool hi = corner & (1u << a);
      weight *= hi ? frac[a] : 1.0 - frac[a];
      flat += strides[a] * (base[a] + (hi ? 1 : 0));
    }
    if (weight != 0.0) out += weight * grid_values[flat];
  }
  return out;
}

void write_checkpoint(std::ostream& os, const Checkpoint& c) {
  const auto& cfg = c.params.config;
  KeyValues kv = c.extra;
  kv.set("arch.width", std::to_string(cfg.width));
  kv.set("arch.blocks", std::to_string(cfg.blocks));
  kv.set("arch.modes", std::to_string(cfg.modes));
  kv.set("arch.grid", join_ints(cfg.grid));
  kv.set("arch.in_channels", std::to_string(cfg.in_channels));
  kv.set("arch.readout", readout_name(cfg.readout));
  kv.set("arch.control_counts", join_ints(cfg.control_counts));
  kv.set("arch.control_orders", join_ints(cfg.control_orders));
  kv.set("kind", kind_name(c.kind));
  kv.set("seed", std::to_string(c.seed));
  std::string table;
  for (const auto& t : c.params.tensors) table += (table.empty() ? "" : ",") + t.name + ":" + std::to_string(t.size);
  kv.set("tensors", table);
  os << kCheckpointMagic << '\n';
  kv.write(os);
  os << "data " << c.params.data.size() << '\n';
  write_f64_le(os, c.params.data);
  if (!os) throw Error(ErrorKind::Io, "failed to write checkpoint");
}

Checkpoint read_checkpoint(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kCheckpointMagic) throw Error(ErrorKind::Io, "not a checkpoint");
  std::stringstream manifest;
  std::size_t count = 0;
  bool found = false;
  while (std::getline(is, line)) {
    if (line.rfind("data ", 0) == 0) {
      count = std::stoull(line.substr(5));
      found = true;
      break;
    }
    manifest << line << '\n';
  }
  if (!found) throw Error(ErrorKind::Io, "checkpoint has no data section");
  KeyValues kv = KeyValues::parse(manifest);
  Checkpoint c;
  ArchConfig cfg;
  cfg.width = static_cast<int>(kv.get_int("arch.width", 0));
  cfg.blocks = static_cast<int>(kv.get_int("arch.blocks", 0));
  cfg.modes = static_cast<int>(kv.get_int("arch.modes", 0));
  cfg.grid = to_ints(kv.get_doubles("arch.grid", {}));
  cfg.in_channels = static_cast<int>(kv.get_int("arch.in_channels", 0));
  cfg.readout = parse_readout(kv.require_string("arch.readout"));
  cfg.control_counts = to_ints(kv.get_doubles("arch.control_counts", {}));
  cfg.control_orders = to_ints(kv.get_doubles("arch.control_orders", {}));
  c.params = zero_params(cfg);
  if (c.params.data.size() != count) throw Error(ErrorKind::Io, "checkpoint size does not match its architecture");
  c.params.data = read_f64_le(is, count);
  c.kind = parse_kind(kv.require_string("kind"));
  c.seed = kv.get_u64("seed", 0);
  for (const auto& [key, value] : kv.entries()) {
    if (key.rfind("arch.", 0) != 0 && key != "kind" && key != "seed" && key != "tensors") c.extra.set(key, value);
  }
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorKind::Io, "cannot open " + path.string() + " for writing");
  write_checkpoint(os, c);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorKind::Io, "cannot open " + path.string());
  return read_checkpoint(is);
}

}  // namespace neso
