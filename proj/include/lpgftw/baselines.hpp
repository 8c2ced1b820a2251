#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "lpgftw/lpg_ftw.hpp"
#include "lpgftw/pg.hpp"

namespace lpgftw {

// ---------------------------------------------------------------------------
// EWC
//
// Anchored curvatures H are negative definite, so ||v||^2_H = v'Hv <= 0 and the
// penalty -lambda sum ||theta - alpha||^2_H is a nonnegative cost subtracted
// from the policy-gradient objective. ewc_penalty_grad returns that cost and its
// gradient; the training loop ascends J - cost, i.e. it moves along
// g - grad, which points toward the anchors.

enum class EwcForm { Huszar, Scaled, Original };
enum class EwcSigma { Shared, Task };

struct EwcVariant {
  EwcForm form = EwcForm::Original;
  EwcSigma sigma = EwcSigma::Shared;

  /// Two-digit tag: sigma (1 shared, 2 task) then form (1 huszar, 2 scaled, 3 original).
  std::string tag() const;
  static EwcVariant from_tag(const std::string& tag);
  bool operator==(const EwcVariant&) const = default;
};

std::vector<EwcVariant> all_ewc_variants();

struct EwcAnchor {
  Vector alpha;
  Matrix H;
};

struct EwcState {
  EwcVariant variant;
  double lambda_ewc = 1e-6;
  std::vector<EwcAnchor> anchors;
  int tasks_seen = 0;
  double initial_sigma = 0.1;
  PolicyParams policy;  ///< the single shared policy
  std::map<int, double> task_sigmas;

  static EwcState fresh(EwcVariant v, double lambda_ewc, PolicyLayout layout, double sigma);
};

struct EwcPenalty {
  double penalty = 0.0;  ///< cost, >= 0 for negative definite anchors
  Vector grad;           ///< d penalty / d theta
  Matrix curvature;      ///< d^2 penalty / d theta^2, positive semidefinite
};

/// t is the 1-based index of the task being trained.
EwcPenalty ewc_penalty_grad(const EwcState& state, const Vector& theta, int t);

struct EwcOutcome {
  TrainResult train;
  PolicyParams start_policy;
};

EwcOutcome ewc_train(const TaskInstance& task, EwcState& state, const NPGConfig& cfg,
                     int n_iters, int traj_per_iter, Rng& rng);

/// Policy used to evaluate task_id after training (shared theta; sigma per variant).
PolicyParams ewc_policy_for(const EwcState& state, int task_id);

// ---------------------------------------------------------------------------
// PG-ELLA

struct PgEllaState {
  KnowledgeBase kb;
  std::map<int, TaskRecord> records;
  double sigma = 0.1;
  PolicyLayout layout;

  static PgEllaState fresh(PolicyLayout layout, double sigma, const LpgConfig& lcfg);
};

/// argmax_s -mu ||s||_1 + (alpha - L s)' H (alpha - L s) by coordinate descent
/// followed by an exact solve on the detected active set.
Vector pg_ella_coefficients(const Matrix& L, const Vector& alpha, const Matrix& H, double mu,
                            double tol = 1e-8);

struct PgEllaOutcome {
  TaskRecord record;
  TrainResult stl;
  PolicyParams tune_policy;
  PolicyParams update_policy;
};

PgEllaOutcome pg_ella_train(const TaskInstance& task, PgEllaState& state, const NPGConfig& cfg,
                            int n_iters, int traj_per_iter, Rng& rng);

PolicyParams pg_ella_policy_for(const PgEllaState& state, int task_id);

nlohmann::json to_json(const EwcState& s);
EwcState ewc_state_from_json(const nlohmann::json& j, const PolicyLayout& layout);

}  // namespace lpgftw
