#include "neso/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "neso/error.hpp"
#include "neso/tensor.hpp"

namespace neso {

namespace {

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

double grid_step(const Interval& d, int m) { return d.width() / (m - 1); }

// Finite-difference residual at interior node `idx` of the baseline grid.
LinearForm grid_residual_form(std::span<const int> grid, std::span<const Interval> domain,
                              const SystemSpec& system, std::span<const int> idx) {
  const std::size_t q = grid.size();
  const std::size_t n = q - 1;
  const auto strides = row_major_strides(grid);
  std::size_t centre = 0;
  std::vector<double> x(n), f(n);
  for (std::size_t a = 0; a < q; ++a) centre += strides[a] * idx[a];
  for (std::size_t a = 0; a < n; ++a) x[a] = domain[a].lo + grid_step(domain[a], grid[a]) * idx[a];
  const double t = domain[n].lo + grid_step(domain[n], grid[n]) * idx[n];
  system.drift_at(x, t, f);

  LinearForm form;
  auto add = [&](std::size_t i, double w) {
    form.index.push_back(i);
    form.weight.push_back(w);
  };
  const double ht = grid_step(domain[n], grid[n]);
  add(centre + strides[n], 1.0 / (2 * ht));
  add(centre - strides[n], -1.0 / (2 * ht));
  for (std::size_t a = 0; a < n; ++a) {
    const double h = grid_step(domain[a], grid[a]);
    const double diff = 0.5 * system.sigma[a] * system.sigma[a];
    add(centre + strides[a], -f[a] / (2 * h) - diff / (h * h));
    add(centre - strides[a], f[a] / (2 * h) - diff / (h * h));
    add(centre, 2 * diff / (h * h));
  }
  return form;
}

void write_adam(const std::filesystem::path& path, const AdamState& s) {
  ArrayFile f;
  f.kind = "adam";
  f.axes = {{2, 1, {0.0, 1.0}}, {static_cast<int>(s.m.size()), 1, {0.0, 1.0}}};
  f.values = s.m;
  f.values.insert(f.values.end(), s.v.begin(), s.v.end());
  save_array_file(path, f);
}

AdamState read_adam(const std::filesystem::path& path, std::size_t n, std::int64_t step) {
  const auto f = load_array_file(path);
  if (f.kind != "adam" || f.values.size() != 2 * n) throw Error(ErrorKind::Io, "optimizer state does not match parameters");
  AdamState s;
  s.m.assign(f.values.begin(), f.values.begin() + n);
  s.v.assign(f.values.begin() + n, f.values.end());
  s.step = step;
  return s;
}

std::vector<HistoryRow> read_history_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::vector<HistoryRow> rows;
  std::string line;
  std::getline(is, line);  // header
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() < 7) throw Error(ErrorKind::Io, "malformed history row: " + line);
    HistoryRow r;
    r.epoch = std::stoi(cells[0]);
    r.loss.total = std::stod(cells[1]);
    r.loss.physics = std::stod(cells[2]);
    r.loss.data = std::stod(cells[3]);
    r.wall_ms = std::stod(cells[4]);
    r.loss.icbc = std::stod(cells[5]);
    r.validation = std::stod(cells[6]);
    rows.push_back(r);
  }
  return rows;
}

}  // namespace

double pde_residual(const SurfacePoint& partials, std::span<const double> f,
                    std::span<const double> sigma) {
  double w = partials.dt;
  for (std::size_t k = 0; k < partials.grad.size(); ++k) {
    w -= f[k] * partials.grad[k] + 0.5 * sigma[k] * sigma[k] * partials.hess_diag[k];
  }
  return w;
}

double LinearForm::apply(std::span<const double> out) const {
  double s = 0.0;
  for (std::size_t i = 0; i < index.size(); ++i) s += weight[i] * out[index[i]];
  return s;
}

void LinearForm::accumulate(double scale, std::span<double> grad) const {
  for (std::size_t i = 0; i < index.size(); ++i) grad[index[i]] += scale * weight[i];
}

LinearForm residual_form(const BasisSpec& basis, const SystemSpec& system,
                         std::span<const double> point) {
  const std::size_t n = basis.state_dims();
  const auto st = surface_stencil(basis, point, true);
  std::vector<double> f(n);
  system.drift_at(point.first(n), point[n], f);
  LinearForm form;
  form.index = st.index;
  form.weight.resize(st.index.size());
  for (std::size_t i = 0; i < st.index.size(); ++i) {
    double w = st.dt[i];
    for (std::size_t k = 0; k < n; ++k) {
      w -= f[k] * st.grad[k][i] + 0.5 * system.sigma[k] * system.sigma[k] * st.hess[k][i];
    }
    form.weight[i] = w;
  }
  return form;
}

LinearForm value_form(const BasisSpec& basis, std::span<const double> point) {
  const auto st = surface_stencil(basis, point, false);
  return {st.index, st.value};
}

LinearForm grid_value_form(std::span<const int> grid, std::span<const Interval> domain,
                           std::span<const double> point) {
  const std::size_t q = grid.size();
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
  LinearForm form;
  for (unsigned corner = 0; corner < (1u << q); ++corner) {
    double w = 1.0;
    std::size_t flat = 0;
    for (std::size_t a = 0; a < q; ++a) {
      const bool hi = corner & (1u << a);
      w *= hi ? frac[a] : 1.0 - frac[a];
      flat += strides[a] * (base[a] + (hi ? 1 : 0));
    }
    if (w != 0.0) {
      form.index.push_back(flat);
      form.weight.push_back(w);
    }
  }
  return form;
}

double physics_loss(const ControlTensor& c, const SystemSpec& system,
                    std::span<const std::vector<double>> points) {
  if (points.empty()) throw Error(ErrorKind::Configuration, "no collocation points");
  double sum = 0.0;
  for (const auto& p : points) {
    const double w = residual_form(c.basis(), system, p).apply(c.values());
    sum += w * w;
  }
  return sum / points.size();
}

std::vector<std::vector<double>> sample_collocation(const BasisSpec& basis, int count,
                                                    std::uint64_t seed) {
  if (count < 1) throw Error(ErrorKind::Configuration, "collocation count must be >= 1");
  const std::size_t dims = basis.dims();
  std::vector<std::uniform_real_distribution<double>> axes;
  for (std::size_t a = 0; a < dims; ++a) {
    const auto& ax = basis.axis(a);
    const double margin = ax.knots.min_span() * ax.domain.width();
    const double lo = ax.domain.lo + margin;
    const double hi = a + 1 == dims ? ax.domain.hi : ax.domain.hi - margin;
    if (!(hi > lo)) throw Error(ErrorKind::Configuration, "knot spans leave no interior for collocation");
    // Open interval: nudge the closed upper end inward.
    axes.emplace_back(lo, std::nextafter(hi, lo));
  }
  std::mt19937_64 rng(seed);
  std::vector<std::vector<double>> pts(count, std::vector<double>(dims));
  for (auto& p : pts) {
    for (std::size_t a = 0; a < dims; ++a) {
      do {
        p[a] = axes[a](rng);
      } while (p[a] <= axes[a].a());
    }
  }
  return pts;
}

AdamState AdamState::zeros(std::size_t n) { return {std::vector<double>(n, 0.0), std::vector<double>(n, 0.0), 0}; }

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               const AdamHyper& hyper) {
  if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw Error(ErrorKind::Configuration, "optimizer state does not match parameters");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      throw Error(ErrorKind::TrainingDiverged, "non-finite gradient at parameter " + std::to_string(i) +
                                                   " (step " + std::to_string(state.step + 1) + ")");
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * grads[i];
    state.v[i] = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * grads[i] * grads[i];
    const double mh = state.m[i] / c1;
    const double vh = state.v[i] / c2;
    params[i] -= hyper.learning_rate * mh / (std::sqrt(vh) + hyper.epsilon);
  }
}

std::string split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Validation: return "validation";
    case Split::Test: return "test";
  }
  return "train";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::Train;
  if (name == "validation") return Split::Validation;
  if (name == "test") return Split::Test;
  throw Error(ErrorKind::Configuration, "unknown split '" + name + "'");
}

std::vector<std::size_t> Dataset::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].split == split) out.push_back(i);
  }
  return out;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorKind::Configuration, m); };
  if (!(w_p >= 0.0) || !(w_d >= 0.0) || !(w_icbc >= 0.0)) fail("loss weights must be >= 0");
  if (w_p == 0.0 && w_d == 0.0) fail("w_p and w_d cannot both be zero");
  if (epochs < 1) fail("epochs must be >= 1");
  if (w_p > 0.0 && collocation < 1) fail("collocation count must be >= 1 when w_p > 0");
  if (!(adam.learning_rate > 0.0)) fail("learning rate must be > 0");
  if (batch_size < 0) fail("batch_size must be >= 0");
}

KeyValues TrainConfig::to_key_values() const {
  KeyValues kv;
  kv.set("w_p", format_double(w_p));
  kv.set("w_d", format_double(w_d));
  kv.set("w_icbc", format_double(w_icbc));
  kv.set("epochs", std::to_string(epochs));
  kv.set("learning_rate", format_double(adam.learning_rate));
  kv.set("adam_beta1", format_double(adam.beta1));
  kv.set("adam_beta2", format_double(adam.beta2));
  kv.set("adam_epsilon", format_double(adam.epsilon));
  kv.set("collocation", std::to_string(collocation));
  kv.set("seed", std::to_string(seed));
  kv.set("collocation_seed", std::to_string(collocation_seed));
  kv.set("batch_size", std::to_string(batch_size));
  kv.set("width", std::to_string(arch.width));
  kv.set("blocks", std::to_string(arch.blocks));
  kv.set("modes", std::to_string(arch.modes));
  kv.set("feature_grid", join_ints(arch.grid));
  kv.set("readout", readout_name(arch.readout));
  kv.set("control_counts", join_ints(arch.control_counts));
  kv.set("control_orders", join_ints(arch.control_orders));
  return kv;
}

TrainConfig TrainConfig::from_key_values(const KeyValues& kv) {
  TrainConfig c;
  c.w_p = kv.get_double("w_p", c.w_p);
  c.w_d = kv.get_double("w_d", c.w_d);
  c.w_icbc = kv.get_double("w_icbc", c.w_icbc);
  c.epochs = static_cast<int>(kv.get_int("epochs", c.epochs));
  c.adam.learning_rate = kv.get_double("learning_rate", c.adam.learning_rate);
  c.adam.beta1 = kv.get_double("adam_beta1", c.adam.beta1);
  c.adam.beta2 = kv.get_double("adam_beta2", c.adam.beta2);
  c.adam.epsilon = kv.get_double("adam_epsilon", c.adam.epsilon);
  c.collocation = static_cast<int>(kv.get_int("collocation", c.collocation));
  c.seed = kv.get_u64("seed", c.seed);
  c.collocation_seed = kv.get_u64("collocation_seed", c.collocation_seed);
  c.batch_size = static_cast<int>(kv.get_int("batch_size", c.batch_size));
  c.arch.width = static_cast<int>(kv.get_int("width", c.arch.width));
  c.arch.blocks = static_cast<int>(kv.get_int("blocks", c.arch.blocks));
  c.arch.modes = static_cast<int>(kv.get_int("modes", c.arch.modes));
  c.arch.grid = to_ints(kv.get_doubles("feature_grid", {}));
  c.arch.readout = parse_readout(kv.get_string("readout", readout_name(c.arch.readout)));
  if (kv.get_bool("baseline", false)) c.arch.readout = Readout::Grid;
  c.arch.control_counts = to_ints(kv.get_doubles("control_counts", {}));
  c.arch.control_orders = to_ints(kv.get_doubles("control_orders", {}));
  c.validate();
  return c;
}

double combine_losses(const LossParts& parts, const TrainConfig& config) {
  double l = config.w_p * parts.physics + config.w_d * parts.data;
  if (config.baseline()) l += config.w_icbc * parts.icbc;
  return l;
}

PreparedRecord prepare_record(const Record& r, const TrainConfig& config) {
  PreparedRecord p;
  p.targets = r.targets;
  const auto& arch = config.arch;
  if (config.baseline()) {
    const auto& grid = r.input.grid;
    for (const auto& pt : r.points) p.data.push_back(grid_value_form(grid, r.input.domain, pt));
    const std::size_t q = grid.size();
    const auto strides = row_major_strides(grid);
    for_each_index(grid, [&](std::span<const int> idx) {
      bool face = false;
      bool interior = idx[q - 1] > 0 && idx[q - 1] < grid[q - 1] - 1;
      double target = r.icbc.initial_value();
      for (std::size_t a = 0; a + 1 < q; ++a) {
        if (idx[a] == 0 || idx[a] == grid[a] - 1) {
          face = true;
          target = r.icbc.face_value(a, idx[a] == 0 ? 0 : 1);
        }
        interior = interior && idx[a] > 0 && idx[a] < grid[a] - 1;
      }
      std::size_t flat = 0;
      for (std::size_t a = 0; a < q; ++a) flat += strides[a] * idx[a];
      if (face || idx[q - 1] == 0) {
        p.icbc.push_back({{flat}, {1.0}});
        p.icbc_targets.push_back(target);
      }
      if (interior && config.w_p > 0.0) {
        p.residual.push_back(grid_residual_form(grid, r.input.domain, r.system, idx));
      }
    });
    return p;
  }
  const BasisSpec basis = arch.basis(r.input.domain);
  for (const auto& pt : r.points) p.data.push_back(value_form(basis, pt));
  if (config.w_p > 0.0) {
    // Seeded by the record source so the points do not depend on dataset order.
    std::uint64_t rs = config.collocation_seed;
    if (const auto* s = std::get_if<SineSource>(&r.source)) rs = substream_seed(rs, s->seed);
    if (const auto* m = std::get_if<ModeSource>(&r.source)) {
      rs = substream_seed(rs, static_cast<std::uint64_t>(m->system) * 64 + m->mode);
    }
    for (const auto& pt : sample_collocation(basis, config.collocation, rs)) {
      p.residual.push_back(residual_form(basis, r.system, pt));
    }
  }
  return p;
}

LossParts total_loss(const NeuralFunctional& net, const FunctionalParams& params,
                     const Dataset& data, std::span<const PreparedRecord> prepared,
                     std::span<const std::size_t> batch, const TrainConfig& config,
                     std::span<double> grad) {
  std::size_t nd = 0, np = 0, ni = 0;
  for (std::size_t r : batch) {
    nd += prepared[r].data.size();
    np += prepared[r].residual.size();
    ni += prepared[r].icbc.size();
  }
  if (config.w_p > 0.0 && np == 0) throw Error(ErrorKind::Configuration, "empty collocation set with w_p > 0");
  if (config.w_d > 0.0 && nd == 0) throw Error(ErrorKind::Configuration, "no data points with w_d > 0");
  const bool want_grad = !grad.empty();
  if (want_grad) std::fill(grad.begin(), grad.end(), 0.0);

  LossParts parts;
  std::vector<double> upstream;
  for (std::size_t r : batch) {
    const auto& rec = data.records[r];
    const auto& pr = prepared[r];
    const Tape tape = net.forward(params, rec.input, rec.icbc);
    const auto& out = tape.output;
    if (want_grad) upstream.assign(out.size(), 0.0);
    for (std::size_t i = 0; i < pr.data.size(); ++i) {
      const double e = pr.targets[i] - pr.data[i].apply(out);
      parts.data += e * e;
      if (want_grad) pr.data[i].accumulate(-2.0 * config.w_d * e / nd, upstream);
    }
    for (const auto& form : pr.residual) {
      const double w = form.apply(out);
      parts.physics += w * w;
      if (want_grad) form.accumulate(2.0 * config.w_p * w / np, upstream);
    }
    if (config.baseline()) {
      for (std::size_t i = 0; i < pr.icbc.size(); ++i) {
        const double e = pr.icbc[i].apply(out) - pr.icbc_targets[i];
        parts.icbc += e * e;
        if (want_grad) pr.icbc[i].accumulate(2.0 * config.w_icbc * e / ni, upstream);
      }
    }
    if (want_grad) {
      const auto g = net.backward(params, tape, upstream);
      for (std::size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
    }
  }
  if (nd) parts.data /= nd;
  if (np) parts.physics /= np;
  if (ni) parts.icbc /= ni;
  parts.total = combine_losses(parts, config);
  return parts;
}

void write_history_csv(std::ostream& os, std::span<const HistoryRow> rows) {
  os << "epoch,L,L_p,L_d,wall_ms,L_icbc,validation\n";
  for (const auto& r : rows) {
    os << r.epoch << ',' << format_double(r.loss.total) << ',' << format_double(r.loss.physics) << ','
       << format_double(r.loss.data) << ',' << format_double(r.wall_ms) << ','
       << format_double(r.loss.icbc) << ',' << format_double(r.validation) << '\n';
  }
}

std::vector<double> predict_points(const FunctionalParams& params, const Record& r,
                                   std::span<const std::vector<double>> points) {
  const NeuralFunctional net(params.config);
  const Tape tape = net.forward(params, r.input, r.icbc);
  std::vector<double> out;
  out.reserve(points.size());
  if (params.config.readout == Readout::Grid) {
    for (const auto& p : points) out.push_back(grid_value(tape.output, r.input.grid, r.input.domain, p));
  } else {
    const auto c = net.control_tensor(tape);
    for (const auto& p : points) out.push_back(eval_value(c, p));
  }
  return out;
}

Metrics compute_metrics(std::span<const double> truth, std::span<const double> prediction) {
  if (truth.size() != prediction.size() || truth.empty()) {
    throw Error(ErrorKind::Configuration, "metric inputs differ in length or are empty");
  }
  Metrics m;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double e = prediction[i] - truth[i];
    m.mse += e * e;
    m.mae += std::abs(e);
    m.rel_err += std::abs(e) / std::max(std::abs(truth[i]), 0.05);
  }
  const double n = static_cast<double>(truth.size());
  m.mse /= n;
  m.mae /= n;
  m.rel_err /= n;
  return m;
}

TrainResult train(const TrainConfig& input_config, const Dataset& data, const TrainOptions& options) {
  TrainConfig config = input_config;
  const auto train_idx = data.indices(Split::Train);
  const auto val_idx = data.indices(Split::Validation);
  if (train_idx.empty()) throw Error(ErrorKind::Configuration, "dataset has no training records");
  const auto& first = data.records[train_idx.front()].input;
  if (config.arch.in_channels == 0) config.arch.in_channels = first.channels;
  if (config.arch.grid.empty()) config.arch.grid = first.grid;
  if (!config.baseline() && config.arch.control_counts.empty()) {
    config.arch.control_counts.assign(config.arch.grid.size(), 16);
    config.arch.control_orders.assign(config.arch.grid.size(), 3);
  }
  config.validate();
  const NeuralFunctional net(config.arch);

  std::vector<PreparedRecord> prepared(data.records.size());
  for (std::size_t i : train_idx) prepared[i] = prepare_record(data.records[i], config);

  const auto t_start = std::chrono::steady_clock::now();
  TrainResult result;
  Checkpoint current;
  current.params = init_params(config.seed, config.arch);
  current.kind = data.kind;
  current.seed = config.seed;
  AdamState adam = AdamState::zeros(current.params.data.size());
  Checkpoint best = current;
  double best_metric = std::numeric_limits<double>::infinity();
  int start_epoch = 0;
  double prior_seconds = 0.0;  // wall time of earlier sessions of a resumed run

  const auto& dir = options.run_dir;
  if (!dir.empty()) std::filesystem::create_directories(dir);
  if (options.resume) {
    if (dir.empty()) throw Error(ErrorKind::Configuration, "resume needs a run directory");
    current = load_checkpoint(dir / "last.ckpt");
    if (current.params.data.size() != adam.m.size()) throw Error(ErrorKind::Io, "checkpoint does not match the configuration");
    best = load_checkpoint(dir / "best.ckpt");
    start_epoch = static_cast<int>(current.extra.get_int("train.epoch", -1)) + 1;
    best_metric = current.extra.get_double("train.best_metric", best_metric);
    prior_seconds = current.extra.get_double("train.seconds", 0.0);
    adam = read_adam(dir / "last.adam", current.params.data.size(),
                     current.extra.get_int("train.adam_step", 0));
    result.history = read_history_csv(dir / "history.csv");
    result.history.resize(std::min<std::size_t>(result.history.size(), start_epoch));
  }

  KeyValues echo = config.to_key_values();
  echo.set("data.name", data.name);
  echo.set("data.horizon", format_double(data.horizon));
  std::vector<double> grad(current.params.data.size());
  std::vector<double> epoch_grad(grad.size());
  for (int epoch = start_epoch; epoch < config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::size_t> order = train_idx;
    std::size_t bs = config.batch_size == 0 ? order.size() : std::min<std::size_t>(config.batch_size, order.size());
    if (bs < order.size()) {
      std::mt19937_64 rng(substream_seed(config.seed, static_cast<std::uint64_t>(epoch)));
      std::shuffle(order.begin(), order.end(), rng);
    }
    LossParts epoch_loss;
    for (std::size_t b = 0; b < order.size(); b += bs) {
      const std::span<const std::size_t> batch(order.data() + b, std::min(bs, order.size() - b));
      const auto parts = total_loss(net, current.params, data, prepared, batch, config, grad);
      if (!std::isfinite(parts.total)) {
        throw Error(ErrorKind::TrainingDiverged,
                    "non-finite loss at epoch " + std::to_string(epoch) + " (" +
                        std::to_string(result.history.size()) + " history rows kept)");
      }
      const double share = static_cast<double>(batch.size()) / order.size();
      epoch_loss.total += share * parts.total;
      epoch_loss.physics += share * parts.physics;
      epoch_loss.data += share * parts.data;
      epoch_loss.icbc += share * parts.icbc;
      adam_step(current.params.data, grad, adam, config.adam);
    }

    HistoryRow row;
    row.epoch = epoch;
    row.loss = epoch_loss;
    if (!val_idx.empty()) {
      double se = 0.0;
      std::size_t count = 0;
      for (std::size_t i : val_idx) {
        const auto& rec = data.records[i];
        const auto pred = predict_points(current.params, rec, rec.points);
        for (std::size_t k = 0; k < pred.size(); ++k) se += (pred[k] - rec.targets[k]) * (pred[k] - rec.targets[k]);
        count += pred.size();
      }
      row.validation = se / count;
    } else {
      row.validation = epoch_loss.total;
    }
    // Metric of the parameters after this epoch's update is only known next
    // epoch; with validation records it is exact, else the pre-update loss.
    if (row.validation < best_metric) {
      best_metric = row.validation;
      best.params = current.params;
      best.extra.set("train.best_epoch", std::to_string(epoch));
    }
    row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(row);

    current.extra = echo;
    current.extra.set("train.epoch", std::to_string(epoch));
    current.extra.set("train.adam_step", std::to_string(adam.step));
    current.extra.set("train.best_metric", format_double(best_metric));
    const double elapsed =
        prior_seconds + std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    current.extra.set("train.seconds", format_double(elapsed));
    best.kind = current.kind;
    best.seed = current.seed;
    for (const auto& [k, v] : echo.entries()) best.extra.set(k, v);
    best.extra.set("train.seconds", format_double(elapsed));
    if (!dir.empty() && ((epoch + 1) % std::max(options.save_every, 1) == 0 || epoch + 1 == config.epochs)) {
      save_checkpoint(dir / "last.ckpt", current);
      write_adam(dir / "last.adam", adam);
      save_checkpoint(dir / "best.ckpt", best);
      std::ofstream hist(dir / "history.csv");
      write_history_csv(hist, result.history);
    }
    if (options.on_epoch) options.on_epoch(row);
  }
  result.best = best;
  result.last = current;
  result.seconds =
      prior_seconds + std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return result;
}

}  // namespace neso
