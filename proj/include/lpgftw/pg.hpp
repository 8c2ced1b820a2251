#pragma once

#include <functional>
#include <vector>

#include "lpgftw/env.hpp"
#include "lpgftw/policy.hpp"

namespace lpgftw {

enum class HessianKind { Npg, Reinforce };

const char* to_string(HessianKind h);
HessianKind hessian_kind_from_string(const std::string& s);

struct NPGConfig {
  double delta = 0.05;       ///< trust-region size: step' F step = delta
  double gae_lambda = 0.97;
  double gamma = 0.995;
  /// Damping added to every Fisher: fisher_damping_rel * trace(F)/d + fisher_damping.
  double fisher_damping = 1e-8;
  double fisher_damping_rel = 1e-6;
  bool normalize_advantages = true;
  HessianKind hessian = HessianKind::Npg;
  /// Optional plain-gradient ascent on log(sigma) after each NPG step.
  bool learn_sigma = false;
  double sigma_lr = 0.01;

  void validate() const;
};

struct ValueBaseline {
  Vector weights;

  double predict(const Vector& state, std::size_t t, std::size_t horizon) const;
};

/// Value features: state, elementwise squares, t / horizon, 1.
Vector value_features(const Vector& state, std::size_t t, std::size_t horizon);

struct PGBatch {
  std::vector<Trajectory> trajectories;
  std::vector<std::vector<double>> advantages;
  int task_id = 0;

  std::size_t num_steps() const;
  bool has_advantages() const;
  double mean_return(double gamma) const;
};

PGBatch collect_batch(const TaskInstance& task, const PolicyParams& p, int n_traj, Rng& rng);

ValueBaseline fit_value_baseline(const PGBatch& batch, double gamma);

/// GAE recursion with terminal value 0, without normalization.
std::vector<double> gae_advantages(const Trajectory& traj, const ValueBaseline& baseline,
                                   double gamma, double gae_lambda);

/// Shift/scale all advantages in the batch to mean 0, std 1. A constant batch
/// is only centered.
void normalize_advantages(PGBatch& batch);

/// Baseline fit, GAE and (optionally) normalization.
void compute_advantages(PGBatch& batch, const NPGConfig& cfg);

/// (1/N_traj) sum_traj sum_i grad log pi(x_i, u_i) A_i
Vector pg_gradient(const PGBatch& batch, const PolicyParams& p);

/// (1/N_steps) sum score score' with no damping.
Matrix fisher_raw(const PGBatch& batch, const PolicyParams& p);
double fisher_damping(const Matrix& raw, const NPGConfig& cfg);
Matrix add_damping(const Matrix& raw, const NPGConfig& cfg);
Matrix fisher(const PGBatch& batch, const PolicyParams& p, const NPGConfig& cfg);

struct NpgStep {
  Vector step;
  double eta = 0.0;
  bool vanished = false;  ///< g'F^{-1}g <= 1e-300; step is zero
};

NpgStep npg_step(const Vector& g, const Matrix& F, double delta);

/// Linear-Gaussian Hessian -(1/2 sigma^2) E[sum x x' A], one block per action row.
Matrix reinforce_hessian(const PGBatch& batch, const PolicyParams& p);

/// -(1/eta) F. Throws NoStepTaken when eta is not positive.
Matrix npg_hessian(const Matrix& F, double eta);

struct GradHess {
  Vector g;
  Matrix H;
  Matrix F;
  double eta = 0.0;
  long env_steps = 0;
};

/// One fresh batch at p: gradient and the configured Hessian.
GradHess grad_and_hess_at(const TaskInstance& task, const PolicyParams& p,
                          const NPGConfig& cfg, int traj_per_iter, Rng& rng);

/// Extra objective terms for penalised NPG: adds its gradient to g and its
/// (sign-flipped, positive definite) curvature to F.
using ObjectiveAugmentation = std::function<void(const Vector& theta, Vector& g, Matrix& F)>;

struct TrainResult {
  PolicyParams policy;
  std::vector<double> curve;  ///< mean discounted return of each iteration's batch
  Vector final_g;
  Matrix final_H;
  double final_eta = 0.0;
  long env_steps = 0;
  double max_constraint_error = 0.0;  ///< max |step'F step - delta| / delta
};

TrainResult npg_train(const TaskInstance& task, PolicyParams p0, const NPGConfig& cfg,
                      int n_iters, int traj_per_iter, Rng& rng,
                      const ObjectiveAugmentation& augment = {},
                      bool final_grad_and_hess = true);

/// Single-task learning with NPG.
TrainResult stl_train(const TaskInstance& task, const PolicyParams& p0, const NPGConfig& cfg,
                      int n_iters, int traj_per_iter, Rng& rng);

}  // namespace lpgftw
