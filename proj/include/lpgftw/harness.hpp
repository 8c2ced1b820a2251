#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lpgftw/baselines.hpp"
#include "lpgftw/env.hpp"
#include "lpgftw/lpg_ftw.hpp"
#include "lpgftw/pg.hpp"

namespace lpgftw {

enum class Method { LpgFtw, Stl, Ewc, PgElla };

const char* to_string(Method m);
Method method_from_string(const std::string& s);

struct MethodParams {
  int k = 5;
  double lambda = 1e-5;
  double mu = 1e-5;
  int M = 0;  ///< consolidation interval; 0 means once per task
  double lambda_ewc = 1e-6;
  /// When nonempty EWC is run once per value and the best mean final return wins.
  std::vector<double> lambda_ewc_grid;
  std::string variant = "1,3";
};

struct ExperimentConfig {
  Method method = Method::LpgFtw;
  MethodParams method_params;
  TaskFamilySpec family;
  int T_max = 20;
  int n_iters = 50;
  int traj_per_iter = 10;
  NPGConfig npg;
  std::vector<std::int64_t> seeds = {0, 1, 2, 3, 4};
  int eval_rollouts = 50;
  std::string output_dir = "runs/default";
  bool keep_hessians = false;

  bool factored() const { return method == Method::LpgFtw || method == Method::PgElla; }
  void validate() const;
};

nlohmann::json to_json(const NPGConfig& c);
NPGConfig npg_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const ExperimentConfig& c);
/// Throws Error(Config) on malformed input or unknown keys.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

struct TaskRow {
  std::int64_t seed = 0;
  int task_index = 0;
  int task_id = 0;
  double start_return = 0.0;
  double tune_return = 0.0;
  double update_return = 0.0;
  double final_return = 0.0;
  long env_steps_used = 0;
  double train_seconds = 0.0;
  double eval_seconds = 0.0;
};

struct CurveRow {
  std::int64_t seed = 0;
  int task_index = 0;
  int iteration = 0;
  double mean_return = 0.0;
};

/// Per-seed theory diagnostics, filled for the factored methods.
struct SeedDiagnostics {
  std::vector<double> stability_scaled;
  double stability_trend_ratio = 0.0;  ///< max / median over the last 10 tasks
  std::vector<double> surrogate_values;
  std::vector<double> surrogate_successive;
  bool surrogate_settling = false;  ///< last-5 successive diffs <= max of the first 5
  double max_first_order = 0.0;     ///< max ||grad of the surrogate||_F after a solve
  std::vector<double> lemma2_relative;  ///< max violation / ||g||_inf per task
  std::vector<double> assumption_d;     ///< per task
  double max_hessian_eigenvalue = std::numeric_limits<double>::quiet_NaN();  ///< max of lambda_max(H)
  double max_constraint_error = 0.0;    ///< max |step'F step - delta| / delta
};

struct SeedResult {
  std::int64_t seed = 0;
  bool ok = true;
  std::string error;
  std::vector<TaskRow> rows;
  std::vector<CurveRow> curves;
  SeedDiagnostics diagnostics;
  std::vector<TaskInstance> tasks;  ///< in training order
  nlohmann::json checkpoint;        ///< method state after the last task
  double lambda_ewc = 0.0;
};

struct LifelongMetrics {
  ExperimentConfig config;
  std::vector<SeedResult> seeds;
  double selected_lambda_ewc = 0.0;
  /// (lambda_ewc, mean final return) for every grid value tried.
  std::vector<std::pair<double, double>> ewc_grid_scores;

  bool all_ok() const;
};

/// Tasks of one seed in training order; task ids are their sampling indices.
std::vector<TaskInstance> draw_tasks(const ExperimentConfig& cfg, std::int64_t seed);

/// Seed of the evaluation stream shared by every phase of (seed, task).
std::uint64_t eval_seed(std::int64_t seed, int task_id);

SeedResult run_seed(const ExperimentConfig& cfg, std::int64_t seed);

/// All seeds, in parallel when `parallel` is set. Failed seeds are recorded, not thrown.
LifelongMetrics run_lifelong(const ExperimentConfig& cfg, bool parallel = true);

std::string metrics_csv(const LifelongMetrics& m);
std::string curves_csv(const LifelongMetrics& m);
nlohmann::json summary_json(const LifelongMetrics& m);
nlohmann::json checkpoint_json(const LifelongMetrics& m);
nlohmann::json diagnostics_json(const LifelongMetrics& m);
nlohmann::json tasks_manifest_json(const LifelongMetrics& m);

/// Writes lifelong_metrics.csv, curves.csv, summary.json, checkpoint.json,
/// tasks.json, diagnostics.json and the SVG plots into dir.
void emit_outputs(const LifelongMetrics& m, const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Re-loading run artifacts

std::vector<TaskRow> parse_metrics_csv(const std::string& text);
std::vector<CurveRow> parse_curves_csv(const std::string& text);

struct EvalRow {
  std::int64_t seed = 0;
  int task_id = 0;
  double mean_return = 0.0;
  double std_error = 0.0;
};

/// Evaluates the stored policies of a checkpoint on the manifest's tasks.
std::vector<EvalRow> evaluate_checkpoint(const nlohmann::json& checkpoint,
                                         const nlohmann::json& manifest);

/// Recomputes the diagnostics report from checkpoint.json.
nlohmann::json replay_diagnostics(const nlohmann::json& checkpoint);

}  // namespace lpgftw
