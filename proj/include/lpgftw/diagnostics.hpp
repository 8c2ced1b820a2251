#pragma once

#include <vector>

#include <json.hpp>

#include "lpgftw/evaluation.hpp"
#include "lpgftw/lpg_ftw.hpp"

namespace lpgftw {

/// Dictionary drift per task: diff[t] = ||L_t - L_{t-1}||_F (t is 1-based;
/// diff[0] compares against an all-zero start) and scaled[t] = (t+1) * diff[t].
/// Snapshots with fewer columns are zero-padded on the right.
struct StabilitySeries {
  std::vector<double> diffs;
  std::vector<double> scaled;
  double max_scaled_after_init = 0.0;  ///< max scaled over t >= k + 2
};

StabilitySeries stability_series(const std::vector<Matrix>& L_history, int k);

/// Max / median ratio of the scaled series over its last `window` entries.
double stability_trend_ratio(const StabilitySeries& s, int window);

struct OptimalityReport {
  Vector rho;
  std::vector<int> active_set;
  double max_violation = 0.0;
  double assumption_d = 0.0;  ///< max eigenvalue of L_g' H L_g on the active set
  bool vacuous = true;        ///< active set empty
};

/// rho_j = l_j' [2 H (L s - alpha) + g]; active coordinates need rho_j = mu sign(s_j),
/// inactive ones |rho_j| <= mu.
OptimalityReport check_lemma2(const Matrix& L, const Vector& s, const Vector& alpha,
                              const Matrix& H, const Vector& g, double mu);

struct AssumptionD {
  double value = 0.0;
  bool vacuous = false;
};

AssumptionD check_assumption_d(const Matrix& L, const Matrix& H, const Vector& s);

/// -lambda ||L||_F^2 + (1/t) sum hat_ell over the records.
double surrogate_value(const Matrix& L, const std::vector<TaskRecord>& records, double lambda,
                       double mu);

/// Gradient of surrogate_value with respect to L.
Matrix surrogate_gradient(const Matrix& L, const std::vector<TaskRecord>& records, double lambda);

struct SurrogateSeries {
  std::vector<double> values;      ///< value[t] uses snapshot t and the first t+1 records
  std::vector<double> successive;  ///< |values[t] - values[t-1]|
};

SurrogateSeries surrogate_series(const std::vector<Matrix>& L_snapshots,
                                 const std::vector<TaskRecord>& records_in_order,
                                 double lambda, double mu);

struct DiversityGap {
  Matrix cross;        ///< cross(i, j): mean return of policy j on task i
  double delta = 0.0;  ///< percent
};

DiversityGap diversity_gap(const std::vector<PolicyParams>& policies,
                           const std::vector<TaskInstance>& tasks, int n_eval, double gamma,
                           Rng& rng);

nlohmann::json to_json(const StabilitySeries& s);
nlohmann::json to_json(const OptimalityReport& r);

}  // namespace lpgftw
