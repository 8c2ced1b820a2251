// Command-line front end: run, eval, diag, plot.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "lpgftw/common.hpp"
#include "lpgftw/harness.hpp"
#include "lpgftw/plot.hpp"
#include "lpgftw/serialization.hpp"

namespace fs = std::filesystem;
using namespace lpgftw;

namespace {

constexpr int kOk = 0;
constexpr int kSeedFailed = 1;
constexpr int kConfigError = 2;

nlohmann::json load_json(const fs::path& p) {
  try {
    return nlohmann::json::parse(read_file(p));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Config, p.string() + ": " + e.what());
  } catch (const Error& e) {
    throw Error(ErrorKind::Config, e.what());
  }
}

int cmd_run(const std::string& config_path, std::int64_t seed_offset, const std::string& out) {
  ExperimentConfig cfg = load_config(config_path);
  for (auto& s : cfg.seeds) s += seed_offset;
  if (!out.empty()) cfg.output_dir = out;
  const LifelongMetrics m = run_lifelong(cfg);
  emit_outputs(m, cfg.output_dir);
  const auto summary = summary_json(m);
  const auto& agg = summary.at("aggregates");
  std::cout << to_string(cfg.method) << ": " << summary.at("seeds_completed") << "/"
            << cfg.seeds.size() << " seeds, final return "
            << agg.at("final_return").at("mean").get<double>() << " +- "
            << agg.at("final_return").at("std_error").get<double>() << " -> " << cfg.output_dir
            << "\n";
  for (const auto& s : m.seeds)
    if (!s.ok) std::cerr << "seed " << s.seed << " failed: " << s.error << "\n";
  return m.all_ok() ? kOk : kSeedFailed;
}

int cmd_eval(const std::string& checkpoint, const std::string& tasks) {
  const auto rows = evaluate_checkpoint(load_json(checkpoint), load_json(tasks));
  std::cout << "seed,task_id,mean_return,std_error\n";
  std::cout.precision(17);
  for (const auto& r : rows)
    std::cout << r.seed << ',' << r.task_id << ',' << r.mean_return << ',' << r.std_error << "\n";
  return kOk;
}

int cmd_diag(const std::string& run_dir) {
  const fs::path dir(run_dir);
  const auto report = replay_diagnostics(load_json(dir / "checkpoint.json"));
  write_file_atomic(dir / "diagnostics_replay.json", report.dump(2) + "\n");
  for (const auto& s : report.at("seeds")) {
    std::cout << "seed " << s.at("seed") << ": stability trend ratio "
              << s.value("stability_trend_ratio", nlohmann::json()).dump();
    if (s.contains("first_order")) std::cout << ", first-order norm " << s.at("first_order");
    if (s.contains("surrogate_settling"))
      std::cout << ", surrogate settling " << s.at("surrogate_settling");
    std::cout << "\n";
  }
  std::cout << "wrote " << (dir / "diagnostics_replay.json").string() << "\n";
  return kOk;
}

int cmd_plot(const std::string& run_dir) {
  const fs::path dir(run_dir);
  const auto summary = load_json(dir / "summary.json");
  const int k = summary.at("config").at("method_params").at("k").get<int>();
  const auto rows = parse_metrics_csv(read_file(dir / "lifelong_metrics.csv"));
  const auto curves = parse_curves_csv(read_file(dir / "curves.csv"));
  write_plots(rows, curves, k, summary.at("method").get<std::string>(), dir);
  std::cout << "wrote " << (dir / "learning_curve.svg").string() << " and "
            << (dir / "phase_bars.svg").string() << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lifelong policy-gradient experiments"};
  app.require_subcommand(1);

  std::string config_path, out_dir, checkpoint, tasks, run_dir;
  std::int64_t seed_offset = 0;

  auto* run = app.add_subcommand("run", "Run a lifelong experiment from a JSON config");
  run->add_option("--config", config_path, "Experiment config")->required();
  run->add_option("--seed-offset", seed_offset, "Added to every configured seed");
  run->add_option("--out", out_dir, "Output directory (overrides output_dir)");

  auto* eval = app.add_subcommand("eval", "Evaluate checkpointed policies on a task manifest");
  eval->add_option("--checkpoint", checkpoint, "checkpoint.json")->required();
  eval->add_option("--tasks", tasks, "Task manifest (tasks.json)")->required();

  auto* diag = app.add_subcommand("diag", "Recompute diagnostics from a run directory");
  diag->add_option("--run-dir", run_dir, "Run directory")->required();

  auto* plot = app.add_subcommand("plot", "Redraw plots from a run directory's CSV files");
  plot->add_option("--run-dir", run_dir, "Run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfigError;
  }

  try {
    if (*run) return cmd_run(config_path, seed_offset, out_dir);
    if (*eval) return cmd_eval(checkpoint, tasks);
    if (*diag) return cmd_diag(run_dir);
    if (*plot) return cmd_plot(run_dir);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.kind() == ErrorKind::Config || e.kind() == ErrorKind::InvalidArgument ? kConfigError
                                                                                    : kSeedFailed;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kSeedFailed;
  }
  return kOk;
}
