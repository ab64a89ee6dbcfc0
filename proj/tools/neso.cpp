// neso: data generation, training, evaluation, prediction, benchmarking and
// spline projection from the command line.

#include <CLI11.hpp>

#include <iostream>

#include "neso/cli.hpp"
#include "neso/error.hpp"

namespace {

struct Flags {
  std::string config;
  std::string out;
  std::string checkpoint;
  std::string data;
  std::uint64_t seed = 0;
  bool baseline = false;
};

neso::KeyValues resolve(const Flags& f, const CLI::App& cmd) {
  neso::KeyValues kv = f.config.empty() ? neso::KeyValues{} : neso::KeyValues::load(f.config);
  if (cmd.count("--seed")) kv.set("seed", std::to_string(f.seed));
  if (!f.checkpoint.empty()) kv.set("checkpoint", f.checkpoint);
  if (!f.data.empty()) kv.set("data", f.data);
  if (f.baseline) kv.set("baseline", "true");
  return kv;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural safety/recovery probability surrogates"};
  app.require_subcommand(1);
  Flags f;

  auto add = [&](const std::string& name, const std::string& help) {
    auto* c = app.add_subcommand(name, help);
    c->add_option("--config", f.config, "key = value config file")->check(CLI::ExistingFile);
    c->add_option("--out", f.out, "fresh output directory")->required();
    c->add_option("--seed", f.seed, "overrides the config seed");
    return c;
  };
  auto* gen = add("gen-data", "generate a seeded dataset with oracle targets");
  auto* train = add("train", "train a functional on a dataset");
  train->add_option("--data", f.data, "dataset directory (or key `data`)");
  train->add_flag("--baseline", f.baseline, "no-spline grid readout");
  auto* eval = add("eval", "MSE, MAE and relative error of a checkpoint on a dataset");
  eval->add_option("--checkpoint", f.checkpoint, "checkpoint file");
  eval->add_option("--data", f.data, "dataset directory");
  auto* predict = add("predict", "export a predicted probability field");
  predict->add_option("--checkpoint", f.checkpoint, "checkpoint file");
  auto* bench = add("benchmark", "time NeSO inference against PDE and Monte Carlo");
  bench->add_option("--checkpoint", f.checkpoint, "checkpoint file");
  auto* project = add("project", "L2-project a field onto a spline basis");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (gen->parsed()) {
      const auto d = neso::cmd_gen_data(resolve(f, *gen), f.out);
      std::cout << "wrote " << d.records.size() << " records to " << f.out << '\n';
    } else if (train->parsed()) {
      const auto r = neso::cmd_train(resolve(f, *train), f.out);
      const auto& last = r.history.back();
      std::cout << "trained " << r.history.size() << " epochs in " << r.seconds << " s; final L "
                << last.loss.total << " (L_p " << last.loss.physics << ", L_d " << last.loss.data << ")\n";
    } else if (eval->parsed()) {
      const auto e = neso::cmd_eval(resolve(f, *eval), f.out);
      std::cout << "mse " << e.summary.mse << " mae " << e.summary.mae << " rel_err " << e.summary.rel_err
                << '\n';
    } else if (predict->parsed()) {
      const auto g = neso::cmd_predict(resolve(f, *predict), f.out);
      std::cout << "wrote " << g.values.size() << " values to " << f.out << '\n';
    } else if (bench->parsed()) {
      const auto r = neso::cmd_benchmark(resolve(f, *bench), f.out);
      for (const auto& row : r.rows) std::cout << row.method << ' ' << row.seconds << " s\n";
    } else if (project->parsed()) {
      std::cout << "l2_residual " << neso::cmd_project(resolve(f, *project), f.out) << '\n';
    }
  } catch (const neso::Error& e) {
    std::cerr << "error[" << neso::error_tag(e.kind()) << "] " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error[internal] " << e.what() << '\n';
    return 3;
  }
  return 0;
}
