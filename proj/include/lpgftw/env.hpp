#pragma once

#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lpgftw/common.hpp"
#include "lpgftw/policy.hpp"

namespace lpgftw {

enum class FamilyId { Lqr, PointMass };

const char* to_string(FamilyId f);
FamilyId family_from_string(const std::string& s);

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  bool contains(double x) const { return lo <= x && x <= hi; }
  bool operator==(const Interval&) const = default;
};

/// Integration step of the point-mass family.
inline constexpr double kPointMassDt = 0.05;
inline constexpr double kGravity = 9.81;

/// A parametric family of tasks.
///
/// Variation keys for lqr are "A[i,j]" and "B[i,j]" (zero-based); an entry
/// without a key keeps its nominal value. Point-mass keys are "gravity_scale",
/// "mass", "velocity_weight" and "control_weight"; the point mass has state
/// (px, py, vx, vy) and a planar force action.
struct TaskFamilySpec {
  FamilyId family_id = FamilyId::Lqr;
  int state_dim = 1;
  int action_dim = 1;
  int horizon = 50;
  std::map<std::string, Interval> variation_ranges;
  double noise_std = 0.0;

  // lqr
  Matrix nominal_A;
  Matrix nominal_B;
  Matrix Q;
  Matrix R;

  // point_mass nominal values (overridden by variation ranges when present)
  double gravity_scale = 1.0;
  double mass = 1.0;
  double velocity_weight = 1.0;
  double control_weight = 0.1;

  Vector init_mean;
  double init_spread = 0.0;

  FeatureMap feature_map = FeatureMap::RawState;
  /// Exploration scale given to oracle and initial policies.
  double eval_sigma = 0.1;

  void validate() const;
  PolicyLayout policy_layout() const;
};

/// A scalar-state lqr family: a, b drawn relative to their nominal values.
TaskFamilySpec scalar_lqr_family(double a, double b, double rel_variation, int horizon);

/// Builds lqr intervals nominal*(1 -+ rel) around every nonzero entry of A, B.
TaskFamilySpec lqr_family(Matrix A, Matrix B, Matrix Q, Matrix R, double rel_variation,
                          int horizon);

TaskFamilySpec point_mass_family(Interval gravity_scale, int horizon);

struct TaskInstance {
  int task_id = 0;
  std::shared_ptr<const TaskFamilySpec> family;
  std::map<std::string, double> coefficients;

  Matrix A;
  Matrix B;
  Matrix Q;
  Matrix R;

  double gravity_scale = 1.0;
  double mass = 1.0;
  double velocity_weight = 1.0;
  double control_weight = 0.1;

  Vector init_mean;
  double init_spread = 0.0;
  double noise_std = 0.0;
  int horizon = 1;

  int state_dim() const { return family->state_dim; }
  int action_dim() const { return family->action_dim; }
  PolicyLayout policy_layout() const { return family->policy_layout(); }

  Vector sample_initial_state(Rng& rng) const;
};

/// Task with every coefficient at its nominal value.
TaskInstance nominal_task(std::shared_ptr<const TaskFamilySpec> family, int task_id = 0);

struct Trajectory {
  std::vector<Vector> states;
  std::vector<Vector> actions;
  std::vector<double> rewards;
  std::vector<double> log_probs;

  std::size_t size() const { return rewards.size(); }
};

/// Draws coefficients independently and uniformly from the family's ranges.
/// lqr draws whose Riccati iteration does not converge are rejected; after 100
/// rejections this throws DegenerateTaskFamily.
TaskInstance sample_task(std::shared_ptr<const TaskFamilySpec> family, Rng& rng,
                         int task_id = 0);

struct StepResult {
  Vector next_state;
  double reward = 0.0;
};

StepResult step(const TaskInstance& task, const Vector& state, const Vector& action,
                Rng& rng);

/// Exactly `horizon` steps; log-probabilities recorded at sampling time.
Trajectory rollout(const TaskInstance& task, const PolicyParams& policy, int horizon,
                   Rng& rng);

double discounted_return(const Trajectory& traj, double gamma);

struct RiccatiSolution {
  Matrix P;
  Matrix K;  ///< u = K x
  int iterations = 0;
};

/// Discounted Riccati value iteration to a fixed point (|dP|max <= 1e-10,
/// at most 10,000 sweeps). Throws UnstabilizableInstance otherwise.
RiccatiSolution solve_discounted_riccati(const Matrix& A, const Matrix& B,
                                         const Matrix& Q, const Matrix& R, double gamma);

PolicyParams optimal_lqr_policy(const TaskInstance& task, double gamma);

nlohmann::json to_json(const TaskFamilySpec& f);
TaskFamilySpec family_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TaskInstance& t);
TaskInstance task_from_json(const nlohmann::json& j);

}  // namespace lpgftw
