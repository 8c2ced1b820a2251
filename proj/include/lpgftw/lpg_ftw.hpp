#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lpgftw/pg.hpp"

namespace lpgftw {

enum class KbPhase { Initializing, Main };

/// Shared dictionary plus the unscaled running sums of the consolidation
/// system: A_acc = 2 sum (s s') (x) H and b_acc = sum s (x) (-g + 2 H alpha).
/// The 1/T scaling and the -2 lambda I ridge are applied in solve_L.
///
/// vec(L) stacks the columns of L, so block (i, j) of A_acc is the d x d
/// matrix multiplying column j in the equation for column i.
struct KnowledgeBase {
  Matrix L;
  Matrix A_acc;
  Vector b_acc;
  int T = 0;
  int k = 0;
  int d = 0;
  double lambda_reg = 1e-5;
  double mu_reg = 1e-5;
  KbPhase phase = KbPhase::Initializing;
  /// false drops the -g contribution to b_acc (PG-ELLA's surrogate).
  bool linear_term = true;

  static KnowledgeBase empty(int d, int k, double lambda, double mu);

  int columns() const { return static_cast<int>(L.cols()); }
  /// Adds a dictionary column and zero-pads the accumulators to match.
  void append_column(const Vector& column);
  void validate() const;
};

struct TaskRecord {
  int task_id = 0;
  Vector s;          ///< coefficients as incorporated into the accumulators
  Vector s_current;  ///< latest trained coefficients (policy and revisit resume point)
  Vector alpha;      ///< expansion point; equals L_snapshot * s at record time
  Matrix H;
  Vector g;
  bool incorporated = false;
  std::string L_snapshot_hash;
};

std::string matrix_hash(const Matrix& m);

struct LpgConfig {
  int k = 5;
  double lambda = 1e-5;
  double mu = 1e-5;
  int update_every = 0;  ///< M; 0 means M = N (one consolidation per task)

  void validate() const;
};

Vector init_task_coeffs(int k_current);

/// Zero-pads s on the right to n entries.
Vector pad_coeffs(const Vector& s, int n);

struct CoeffStep {
  Vector s;
  double eta = 0.0;
  bool vanished = false;
  double constraint_error = 0.0;
};

/// NPG ascent step on s for J(L s) - mu ||s||_1, given the theta-space gradient
/// and undamped Fisher. F_s = L' F L + damping(L' F L) I.
CoeffStep s_npg_step(const Matrix& L, const Vector& s, const Vector& g_theta,
                     const Matrix& fisher_theta_raw, const NPGConfig& cfg, double mu);

/// Batch form: the batch must have been collected under theta = L s.
CoeffStep s_npg_step(const Matrix& L, const Vector& s, const PGBatch& batch,
                     const PolicyLayout& layout, double sigma, const NPGConfig& cfg, double mu);

/// Fresh-batch (g, H) at theta = L s.
GradHess grad_and_hess(const TaskInstance& task, const Matrix& L, const Vector& s,
                       double sigma, const NPGConfig& cfg, int traj_per_iter, Rng& rng);

/// Second-order surrogate of one task:
/// -mu ||s||_1 + (alpha - L s)' H (alpha - L s) + g' (L s - alpha).
double hat_ell(const Matrix& L, const Vector& s, const Vector& alpha, const Matrix& H,
               const Vector& g, double mu);

void add_task_to_accumulators(KnowledgeBase& kb, TaskRecord& rec);
void remove_task_from_accumulators(KnowledgeBase& kb, TaskRecord& rec);

/// Solves ((1/T) A_acc - 2 lambda I) vec(L) = (1/T) b_acc.
Matrix solve_L(const KnowledgeBase& kb);

struct TaskOutcome {
  TaskRecord record;
  std::vector<double> curve;
  PolicyParams start_policy;
  PolicyParams tune_policy;    ///< before the final consolidation
  PolicyParams update_policy;  ///< after it
  /// Dictionary at which the record's (alpha, g, H) were taken: alpha = expansion_L * s.
  Matrix expansion_L;
  long env_steps = 0;
  int consolidations = 0;
  double max_constraint_error = 0.0;
  /// ||grad of the surrogate at the solved L||_F via the accumulator system, per solve
  std::vector<double> solve_residuals;
};

/// Main-phase training of one task (new or revisited). On a revisit `previous`
/// holds the stored record; it is removed from the accumulators and training
/// resumes from its coefficients.
TaskOutcome train_task(KnowledgeBase& kb, const TaskInstance& task,
                       std::optional<TaskRecord> previous, const NPGConfig& cfg,
                       const LpgConfig& lcfg, double sigma, int n_iters, int traj_per_iter,
                       Rng& rng);

/// One task of the initialization phase: joint NPG on (s, epsilon), then
/// epsilon becomes a new dictionary column with coefficient 1.
TaskOutcome initialize_task(KnowledgeBase& kb, const TaskInstance& task,
                            const NPGConfig& cfg, double sigma, int n_iters,
                            int traj_per_iter, Rng& rng);

/// Runs initialize_task over the supplied tasks (at most k).
std::vector<TaskOutcome> initialize_kb(KnowledgeBase& kb, const std::vector<TaskInstance>& tasks,
                                       const NPGConfig& cfg, double sigma, int n_iters,
                                       int traj_per_iter, Rng& rng);

/// Full lifelong learner: initialization for the first k distinct tasks, then
/// Alg.-1 style training with revisits.
class LpgFtwLearner {
 public:
  LpgFtwLearner(PolicyLayout layout, double sigma, LpgConfig lcfg, NPGConfig npg,
                int traj_per_iter);

  TaskOutcome learn_task(const TaskInstance& task, int n_iters, Rng& rng);

  PolicyParams policy_for(int task_id) const;
  bool has_task(int task_id) const { return records_.count(task_id) > 0; }

  const KnowledgeBase& kb() const { return kb_; }
  KnowledgeBase& kb() { return kb_; }
  const std::map<int, TaskRecord>& records() const { return records_; }
  std::map<int, TaskRecord>& records() { return records_; }
  const PolicyLayout& layout() const { return layout_; }
  double sigma() const { return sigma_; }

 private:
  PolicyLayout layout_;
  double sigma_;
  LpgConfig lcfg_;
  NPGConfig npg_;
  int traj_per_iter_;
  KnowledgeBase kb_;
  std::map<int, TaskRecord> records_;
};

nlohmann::json to_json(const KnowledgeBase& kb);
KnowledgeBase kb_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TaskRecord& rec, bool include_curvature);
TaskRecord record_from_json(const nlohmann::json& j);

}  // namespace lpgftw
