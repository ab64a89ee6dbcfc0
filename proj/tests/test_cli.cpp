#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "neso/cli.hpp"
#include "neso/error.hpp"

using namespace neso;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("neso_test_cli_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

KeyValues kv(std::map<std::string, std::string> m) { return KeyValues(std::move(m)); }

KeyValues sine_data_config(const std::string& seed) {
  return kv({{"case", "sine-recovery"}, {"count", "2"}, {"seed", seed}, {"input_grid", "8 8"},
             {"eval_x", "8"}, {"eval_t", "6"}, {"truth_panels", "1024"}});
}

KeyValues smoke_train_config(const fs::path& data) {
  return kv({{"width", "8"}, {"blocks", "2"}, {"modes", "3"}, {"epochs", "15"}, {"collocation", "32"},
             {"control_counts", "8 7"}, {"control_orders", "3 3"}, {"data", data.string()}});
}

}  // namespace

TEST_CASE("gen-data: reproducible bytes and manifest count") {
  const auto a = scratch("gen_a"), b = scratch("gen_b");
  cmd_gen_data(sine_data_config("4"), a);
  cmd_gen_data(sine_data_config("4"), b);
  CHECK(slurp(a / "records.bin") == slurp(b / "records.bin"));
  CHECK(slurp(a / "manifest.txt") == slurp(b / "manifest.txt"));
  const auto m = KeyValues::load(a / "manifest.txt");
  CHECK(m.get_int("records", -1) == 2);
  CHECK(m.get_string("generator.seed", "") == "4");
  CHECK(KeyValues::load(a / "config.txt").get_string("case", "") == "sine-recovery");

  // Outputs never overwrite an existing run.
  CHECK_THROWS_AS(cmd_gen_data(sine_data_config("4"), a), Error);
  CHECK_THROWS_AS(cmd_gen_data(kv({{"case", "nope"}}), scratch("gen_c")), Error);

  const auto mode = scratch("gen_mode");
  const auto d = cmd_gen_data(kv({{"case", "multi-agent-mode"}, {"systems", "1"}, {"input_grid", "4 4 4"},
                                  {"pde_points", "15"}, {"pde_slices", "5"}, {"sample_grid", "3 3 3"}}),
                              mode);
  CHECK(d.records.size() == 7);
  CHECK(KeyValues::load(mode / "manifest.txt").get_int("records", -1) == 7);
  for (const auto& p : {a, b, mode}) fs::remove_all(p);
}

TEST_CASE("train, eval and predict: perfect oracle, CSV contract and kind refusal") {
  const auto data = scratch("data"), run = scratch("run");
  cmd_gen_data(sine_data_config("9"), data);
  const auto tr = cmd_train(smoke_train_config(data), run);
  CHECK(tr.history.size() == 15);
  for (const char* f : {"best.ckpt", "last.ckpt", "last.adam", "history.csv", "config.txt"}) {
    CHECK(fs::exists(run / f));
  }
  CHECK(slurp(run / "history.csv").rfind("epoch,L,L_p,L_d,wall_ms", 0) == 0);
  CHECK(KeyValues::load(run / "config.txt").get_string("feature_grid", "") == "8 8");

  // Targets produced by the model itself: every metric vanishes.
  const auto ckpt = load_checkpoint(run / "best.ckpt");
  auto ds = load_dataset(data);
  for (auto& r : ds.records) r.targets = predict_points(ckpt.params, r, r.points);
  const auto oracle = scratch("oracle");
  save_dataset(oracle, ds, {});
  const auto ev = scratch("eval");
  const auto e = cmd_eval(kv({{"checkpoint", (run / "best.ckpt").string()}, {"data", oracle.string()}}), ev);
  CHECK(e.summary.mse == 0.0);
  CHECK(e.summary.mae == 0.0);
  CHECK(e.summary.rel_err == 0.0);
  std::istringstream csv(slurp(ev / "metrics.csv"));
  std::string line;
  std::getline(csv, line);
  CHECK(line == "record,points,mse,mae,rel_err");
  int rows = 0;
  std::string last;
  while (std::getline(csv, line)) {
    ++rows;
    last = line;
  }
  CHECK(rows == 3);
  CHECK(last.rfind("all,96,", 0) == 0);

  // Safety data against a recovery model is refused.
  auto flipped = ds;
  flipped.kind = ProblemKind::Safety;
  CHECK_THROWS_AS(evaluate(ckpt, flipped), Error);
  try {
    evaluate(ckpt, flipped);
  } catch (const Error& err) {
    CHECK(err.kind() == ErrorKind::KindMismatch);
  }
  CHECK_THROWS_AS(cmd_predict(kv({{"checkpoint", (run / "best.ckpt").string()}, {"source", "mode"}}),
                              scratch("pred_bad")),
                  Error);

  const auto pred = scratch("pred");
  const auto g = cmd_predict(kv({{"checkpoint", (run / "best.ckpt").string()}, {"system_seed", "5"},
                                 {"grid", "6 4"}}),
                             pred);
  CHECK(g.values.size() == 24);
  // Partition of unity holds to rounding.
  for (double v : g.values) {
    CHECK(v >= -1e-12);
    CHECK(v <= 1.0 + 1e-12);
  }
  const auto back = from_array_file(load_array_file(pred / "prediction.arr"), ProblemKind::Recovery);
  CHECK(back.values == g.values);
  for (const auto& p : {data, run, oracle, ev, pred}) fs::remove_all(p);
}

TEST_CASE("benchmark: CSV contract, deterministic probabilities, finite crossover") {
  const auto data = scratch("bdata"), run = scratch("brun");
  cmd_gen_data(sine_data_config("2"), data);
  cmd_train(smoke_train_config(data), run);
  const auto cfg = kv({{"checkpoint", (run / "best.ckpt").string()}, {"instances", "3"}, {"probes", "2"},
                       {"mc_trajectories", "200"}, {"pde_points", "121"}});
  const auto o1 = scratch("b1"), o2 = scratch("b2");
  const auto r1 = cmd_benchmark(cfg, o1);
  const auto r2 = cmd_benchmark(cfg, o2);
  CHECK(slurp(o1 / "probabilities.csv") == slurp(o2 / "probabilities.csv"));
  CHECK(slurp(o1 / "benchmark.csv").rfind("method,n_systems,seconds\n", 0) == 0);
  CHECK(r1.row("neso").n_systems == 3);
  CHECK(r1.row("neso").seconds < r1.row("pde").seconds);
  CHECK(r1.crossover_pde.has_value());
  CHECK(r1.crossover_mc.has_value());
  CHECK(r1.probes.size() == r2.probes.size());

  CHECK(crossover(100.0, 1.0, 3.0) == 51);
  CHECK(crossover(100.0, 1.0, 1.0) == std::nullopt);
  CHECK(crossover(0.0, 1.0, 2.0) == 1);
  for (const auto& p : {data, run, o1, o2}) fs::remove_all(p);
}

TEST_CASE("project: spline diagnostics") {
  const auto out = scratch("proj");
  const double r = cmd_project(kv({{"field", "sin2pi"}, {"counts", "16 4"}, {"orders", "3 3"}}), out);
  CHECK(r < 1e-3);
  CHECK(KeyValues::load(out / "summary.txt").get_double("l2_residual", -1.0) == doctest::Approx(r));
  fs::remove_all(out);
}

TEST_CASE("executable: exit codes and one-line error tags") {
  const fs::path bin = NESO_BIN;
  const auto dir = scratch("exe");
  fs::create_directories(dir);
  {
    std::ofstream cfg(dir / "bad.txt");
    cfg << "case = nope\n";
  }
  const std::string err = (dir / "err.txt").string();
  const int bad = std::system((bin.string() + " gen-data --config " + (dir / "bad.txt").string() + " --out " +
                               (dir / "x").string() + " 2> " + err).c_str());
  CHECK(bad != 0);
  const auto msg = slurp(err);
  CHECK(msg.rfind("error[configuration] ", 0) == 0);
  CHECK(std::count(msg.begin(), msg.end(), '\n') == 1);

  const int ok = std::system((bin.string() + " project --out " + (dir / "p").string() + " > /dev/null").c_str());
  CHECK(ok == 0);
  const int missing = std::system((bin.string() + " eval --out " + (dir / "e").string() + " 2> " + err).c_str());
  CHECK(missing != 0);
  CHECK(slurp(err).rfind("error[configuration] ", 0) == 0);
  fs::remove_all(dir);
}
