#include <fstream>
#include <random>
#include <sstream>

#include "neso/error.hpp"
#include "neso/pde_oracle.hpp"
#include "neso/tensor.hpp"
#include "neso/training.hpp"

namespace neso {

namespace {

constexpr const char* kSchema = "neso-dataset v1";

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

double node(const Interval& d, int m, int i) { return d.lo + d.width() * i / (m - 1); }

std::string key(std::size_t i, const char* field) {
  return "record." + std::to_string(i) + "." + field;
}

ArrayFile input_array(const InputField& in) {
  ArrayFile f;
  f.kind = "input";
  f.axes.push_back({in.channels, 1, {0.0, 1.0}});
  for (std::size_t a = 0; a < in.grid.size(); ++a) f.axes.push_back({in.grid[a], 1, in.domain[a]});
  f.values = in.values;
  return f;
}

ArrayFile samples_array(const Record& r) {
  const int cols = r.points.empty() ? 1 : static_cast<int>(r.points.front().size()) + 1;
  ArrayFile f;
  f.kind = "samples";
  f.axes = {{static_cast<int>(r.points.size()), 1, {0.0, 1.0}}, {cols, 1, {0.0, 1.0}}};
  for (std::size_t i = 0; i < r.points.size(); ++i) {
    f.values.insert(f.values.end(), r.points[i].begin(), r.points[i].end());
    f.values.push_back(r.targets[i]);
  }
  return f;
}

}  // namespace

void materialize(Record& r, std::span<const int> input_grid, double horizon) {
  const Interval time{0.0, horizon};
  if (const auto* s = std::get_if<SineSource>(&r.source)) {
    r.system = random_sine_dynamics(s->seed);
    r.input = sample_input(r.system, input_grid, time);
  } else {
    const auto& m = std::get<ModeSource>(r.source);
    r.system = mode_safety_system(m.beta1 + m.lambda, m.beta2, m.sigma, m.alpha);
    r.input = mode_input(m.beta2, m.lambda, m.alpha, input_grid, time);
  }
  r.icbc = r.system.icbc();
}

Dataset make_sine_dataset(const SineDatasetOptions& options, Split split) {
  if (options.count < 1 || options.eval_x < 2 || options.eval_t < 2) {
    throw Error(ErrorKind::Configuration, "sine dataset needs count >= 1 and >= 2 eval nodes per axis");
  }
  Dataset d;
  d.name = "sine-recovery";
  d.kind = ProblemKind::Recovery;
  d.horizon = options.horizon;
  for (int i = 0; i < options.count; ++i) {
    Record r;
    r.source = SineSource{substream_seed(options.seed, static_cast<std::uint64_t>(i))};
    r.split = split;
    materialize(r, options.input_grid, options.horizon);
    const auto& f = std::get<SineDrift>(r.system.drift);
    const Interval xs = r.system.domain[0];
    const double alpha = r.system.safe_box[0].lo;
    for (int a = 0; a < options.eval_x; ++a) {
      const double x = node(xs, options.eval_x, a);
      for (int b = 0; b < options.eval_t; ++b) {
        const double t = node({0.0, options.horizon}, options.eval_t, b);
        r.points.push_back({x, t});
        r.targets.push_back(recovery_truth(f, x, t, options.truth_panels, alpha, r.system.sigma[0]));
      }
    }
    d.records.push_back(std::move(r));
  }
  return d;
}

Dataset make_mode_dataset(const ModeDatasetOptions& options, Split split) {
  if (options.systems < 1) throw Error(ErrorKind::Configuration, "mode dataset needs >= 1 system");
  if (options.sample_grid.size() != 3) throw Error(ErrorKind::Configuration, "sample grid is (p, v, t)");
  if (!(options.beta2_lo > 0.0 && options.beta2_lo <= options.beta2_hi && options.alpha_lo > 0.0 &&
        options.alpha_lo <= options.alpha_hi)) {
    throw Error(ErrorKind::Configuration, "parameter ranges must be positive and ordered");
  }
  const auto modes = laplacian_modes(case_study_laplacian());
  Dataset d;
  d.name = "multi-agent-mode";
  d.kind = ProblemKind::Safety;
  d.horizon = options.horizon;
  std::mt19937_64 rng(options.seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const auto& sg = options.sample_grid;
  PdeGrid pde;
  pde.points = {options.pde_points, options.pde_points};
  pde.time_slices = options.pde_slices;
  for (int s = 0; s < options.systems; ++s) {
    const double beta2 = options.beta2_lo + (options.beta2_hi - options.beta2_lo) * u01(rng);
    std::vector<double> alpha(modes.size());
    for (double& a : alpha) a = options.alpha_lo + (options.alpha_hi - options.alpha_lo) * u01(rng);
    for (std::size_t k = 0; k < modes.size(); ++k) {
      Record r;
      ModeSource src;
      src.system = s;
      src.mode = static_cast<int>(k);
      src.beta2 = beta2;
      src.lambda = modes[k].lambda;
      src.alpha = alpha[k];
      src.sigma = options.sigma;
      r.source = src;
      r.split = split;
      materialize(r, options.input_grid, options.horizon);
      const auto sol = solve_subsystem_pde(src.beta1 + src.lambda, beta2, src.sigma, src.alpha, pde,
                                           options.horizon);
      const Interval box{-src.alpha, src.alpha};
      for (int a = 0; a < sg[0]; ++a) {
        for (int b = 0; b < sg[1]; ++b) {
          for (int c = 0; c < sg[2]; ++c) {
            const std::vector<double> x{node(box, sg[0], a), node(box, sg[1], b)};
            const double t = node({0.0, options.horizon}, sg[2], c);
            r.points.push_back({x[0], x[1], t});
            r.targets.push_back(sol.interpolate(x, t));
          }
        }
      }
      d.records.push_back(std::move(r));
    }
  }
  return d;
}

void save_dataset(const std::filesystem::path& dir, const Dataset& d, const KeyValues& generator) {
  std::filesystem::create_directories(dir);
  KeyValues m;
  m.set("schema", kSchema);
  m.set("name", d.name);
  m.set("kind", kind_name(d.kind));
  m.set("horizon", format_double(d.horizon));
  m.set("records", std::to_string(d.records.size()));
  if (!d.records.empty()) m.set("input_grid", join_ints(d.records.front().input.grid));
  for (const auto& [k, v] : generator.entries()) m.set("generator." + k, v);

  std::ofstream bin(dir / "records.bin", std::ios::binary);
  if (!bin) throw Error(ErrorKind::Io, "cannot write " + (dir / "records.bin").string());
  for (std::size_t i = 0; i < d.records.size(); ++i) {
    const auto& r = d.records[i];
    if (r.input.grid != d.records.front().input.grid) {
      throw Error(ErrorKind::Configuration, "records must share one input grid");
    }
    if (const auto* s = std::get_if<SineSource>(&r.source)) {
      m.set(key(i, "source"), "sine");
      m.set(key(i, "seed"), std::to_string(s->seed));
    } else {
      const auto& src = std::get<ModeSource>(r.source);
      m.set(key(i, "source"), "mode");
      m.set(key(i, "system"), std::to_string(src.system));
      m.set(key(i, "mode"), std::to_string(src.mode));
      m.set(key(i, "beta1"), format_double(src.beta1));
      m.set(key(i, "beta2"), format_double(src.beta2));
      m.set(key(i, "lambda"), format_double(src.lambda));
      m.set(key(i, "alpha"), format_double(src.alpha));
      m.set(key(i, "sigma"), format_double(src.sigma));
    }
    m.set(key(i, "split"), split_name(r.split));
    const auto begin = static_cast<std::int64_t>(bin.tellp());
    write_array_file(bin, input_array(r.input));
    write_array_file(bin, samples_array(r));
    m.set(key(i, "offset"), std::to_string(begin));
    m.set(key(i, "length"), std::to_string(static_cast<std::int64_t>(bin.tellp()) - begin));
  }
  if (!bin) throw Error(ErrorKind::Io, "short write to " + (dir / "records.bin").string());
  std::ofstream man(dir / "manifest.txt");
  if (!man) throw Error(ErrorKind::Io, "cannot write " + (dir / "manifest.txt").string());
  m.write(man);
}

Dataset load_dataset(const std::filesystem::path& dir) {
  const auto m = KeyValues::load(dir / "manifest.txt");
  if (m.get_string("schema", "") != kSchema) {
    throw Error(ErrorKind::Io, "unsupported dataset schema in " + dir.string());
  }
  Dataset d;
  d.name = m.require_string("name");
  d.kind = parse_kind(m.require_string("kind"));
  d.horizon = m.get_double("horizon", 10.0);
  const auto count = m.get_int("records", -1);
  if (count < 0) throw Error(ErrorKind::Io, "manifest lacks a record count");
  const auto grid = to_ints(m.get_doubles("input_grid", {}));

  const auto bin_path = dir / "records.bin";
  const auto bin_size = static_cast<std::int64_t>(std::filesystem::file_size(bin_path));
  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) throw Error(ErrorKind::Io, "cannot open " + bin_path.string());
  for (std::int64_t i = 0; i < count; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    Record r;
    const auto source = m.require_string(key(idx, "source"));
    if (source == "sine") {
      r.source = SineSource{m.get_u64(key(idx, "seed"), 0)};
    } else if (source == "mode") {
      ModeSource src;
      src.system = static_cast<int>(m.get_int(key(idx, "system"), 0));
      src.mode = static_cast<int>(m.get_int(key(idx, "mode"), 0));
      src.beta1 = m.get_double(key(idx, "beta1"), 1.0);
      src.beta2 = m.get_double(key(idx, "beta2"), 1.0);
      src.lambda = m.get_double(key(idx, "lambda"), 0.0);
      src.alpha = m.get_double(key(idx, "alpha"), 1.0);
      src.sigma = m.get_double(key(idx, "sigma"), 0.2);
      r.source = src;
    } else {
      throw Error(ErrorKind::Io, "unknown record source '" + source + "'");
    }
    r.split = parse_split(m.require_string(key(idx, "split")));
    materialize(r, grid, d.horizon);

    const auto offset = m.get_int(key(idx, "offset"), -1);
    const auto length = m.get_int(key(idx, "length"), -1);
    if (offset < 0 || length <= 0 || offset + length > bin_size) {
      throw Error(ErrorKind::Io, "record " + std::to_string(i) + " lies outside records.bin");
    }
    bin.seekg(offset);
    const auto input = read_array_file(bin);
    const auto samples = read_array_file(bin);
    if (static_cast<std::int64_t>(bin.tellg()) != offset + length) {
      throw Error(ErrorKind::Io, "record " + std::to_string(i) + " length mismatch");
    }
    if (input.kind != "input" || input.values != r.input.values) {
      throw Error(ErrorKind::Io, "record " + std::to_string(i) + " input does not match its source");
    }
    if (samples.kind != "samples" || samples.axes.size() != 2) {
      throw Error(ErrorKind::Io, "record " + std::to_string(i) + " has malformed samples");
    }
    const int rows = samples.axes[0].count;
    const int cols = samples.axes[1].count;
    for (int k = 0; k < rows; ++k) {
      const auto row = samples.values.begin() + static_cast<std::ptrdiff_t>(k) * cols;
      r.points.emplace_back(row, row + cols - 1);
      r.targets.push_back(row[cols - 1]);
    }
    d.records.push_back(std::move(r));
  }
  return d;
}

}  // namespace neso
