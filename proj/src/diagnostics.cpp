#include "lpgftw/diagnostics.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "lpgftw/serialization.hpp"

namespace lpgftw {

namespace {

Matrix pad_cols(const Matrix& m, Eigen::Index cols) {
  Matrix out = Matrix::Zero(m.rows(), cols);
  out.leftCols(m.cols()) = m;
  return out;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

StabilitySeries stability_series(const std::vector<Matrix>& L_history, int k) {
  StabilitySeries out;
  for (std::size_t t = 0; t < L_history.size(); ++t) {
    const Matrix& cur = L_history[t];
    double diff = cur.norm();
    if (t > 0) {
      const Matrix& prev = L_history[t - 1];
      const Eigen::Index cols = std::max(cur.cols(), prev.cols());
      diff = (pad_cols(cur, cols) - pad_cols(prev, cols)).norm();
    }
    out.diffs.push_back(diff);
    out.scaled.push_back(static_cast<double>(t + 1) * diff);
    if (static_cast<int>(t + 1) >= k + 2)
      out.max_scaled_after_init = std::max(out.max_scaled_after_init, out.scaled.back());
  }
  return out;
}

double stability_trend_ratio(const StabilitySeries& s, int window) {
  const auto n = static_cast<int>(s.scaled.size());
  const int start = std::max(0, n - window);
  std::vector<double> tail(s.scaled.begin() + start, s.scaled.end());
  if (tail.empty()) return 0.0;
  const double med = median(tail);
  const double mx = *std::max_element(tail.begin(), tail.end());
  if (med <= 0.0) return mx <= 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return mx / med;
}

OptimalityReport check_lemma2(const Matrix& L, const Vector& s, const Vector& alpha,
                              const Matrix& H, const Vector& g, double mu) {
  require(L.cols() == s.size() && L.rows() == alpha.size() && g.size() == alpha.size(),
          "optimality check shape mismatch");
  OptimalityReport r;
  r.rho = L.transpose() * (2.0 * H * (L * s - alpha) + g);
  for (Eigen::Index j = 0; j < s.size(); ++j) {
    double v = 0.0;
    if (std::abs(s[j]) > 1e-10) {
      r.active_set.push_back(static_cast<int>(j));
      v = std::abs(r.rho[j] - mu * (s[j] > 0 ? 1.0 : -1.0));
    } else {
      v = std::max(0.0, std::abs(r.rho[j]) - mu);
    }
    r.max_violation = std::max(r.max_violation, v);
  }
  const AssumptionD ad = check_assumption_d(L, H, s);
  r.assumption_d = ad.value;
  r.vacuous = ad.vacuous;
  return r;
}

AssumptionD check_assumption_d(const Matrix& L, const Matrix& H, const Vector& s) {
  std::vector<Eigen::Index> active;
  for (Eigen::Index j = 0; j < s.size(); ++j)
    if (std::abs(s[j]) > 1e-10) active.push_back(j);
  AssumptionD out;
  if (active.empty()) {
    out.vacuous = true;
    return out;
  }
  Matrix La(L.rows(), static_cast<Eigen::Index>(active.size()));
  for (std::size_t a = 0; a < active.size(); ++a) La.col(a) = L.col(active[a]);
  Matrix m = La.transpose() * H * La;
  out.value = max_sym_eigenvalue(0.5 * (m + m.transpose()));
  return out;
}

double surrogate_value(const Matrix& L, const std::vector<TaskRecord>& records, double lambda,
                       double mu) {
  double total = 0.0;
  for (const auto& r : records)
    total += hat_ell(L, pad_coeffs(r.s, static_cast<int>(L.cols())), r.alpha, r.H, r.g, mu);
  const double avg = records.empty() ? 0.0 : total / static_cast<double>(records.size());
  return -lambda * L.squaredNorm() + avg;
}

Matrix surrogate_gradient(const Matrix& L, const std::vector<TaskRecord>& records,
                          double lambda) {
  Matrix grad = Matrix::Zero(L.rows(), L.cols());
  for (const auto& r : records) {
    const Vector s = pad_coeffs(r.s, static_cast<int>(L.cols()));
    grad += (2.0 * r.H * (L * s - r.alpha) + r.g) * s.transpose();
  }
  if (!records.empty()) grad /= static_cast<double>(records.size());
  return grad - 2.0 * lambda * L;
}

SurrogateSeries surrogate_series(const std::vector<Matrix>& L_snapshots,
                                 const std::vector<TaskRecord>& records_in_order,
                                 double lambda, double mu) {
  require(L_snapshots.size() <= records_in_order.size(),
          "surrogate series needs one record per snapshot");
  SurrogateSeries out;
  std::vector<TaskRecord> seen;
  for (std::size_t t = 0; t < L_snapshots.size(); ++t) {
    seen.push_back(records_in_order[t]);
    out.values.push_back(surrogate_value(L_snapshots[t], seen, lambda, mu));
    if (t > 0) out.successive.push_back(std::abs(out.values[t] - out.values[t - 1]));
  }
  return out;
}

DiversityGap diversity_gap(const std::vector<PolicyParams>& policies,
                           const std::vector<TaskInstance>& tasks, int n_eval, double gamma,
                           Rng& rng) {
  require(policies.size() == tasks.size() && !tasks.empty(),
          "diversity gap needs one policy per task");
  const auto n = static_cast<Eigen::Index>(tasks.size());
  DiversityGap out;
  out.cross = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    // Common random numbers across policies on the same task.
    const std::uint64_t seed = child_seed(rng);
    for (Eigen::Index j = 0; j < n; ++j) {
      Rng r(seed);
      out.cross(i, j) = evaluate_policy(tasks[i], policies[j], n_eval, gamma, r).mean;
    }
  }
  if (n == 1) return out;
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double own = out.cross(i, i);
    const double others = (out.cross.row(i).sum() - own) / static_cast<double>(n - 1);
    total += (own - others) / std::abs(own);
  }
  out.delta = 100.0 * total / static_cast<double>(n);
  return out;
}

nlohmann::json to_json(const StabilitySeries& s) {
  return {{"diffs", s.diffs},
          {"scaled", s.scaled},
          {"max_scaled_after_init", s.max_scaled_after_init}};
}

nlohmann::json to_json(const OptimalityReport& r) {
  return {{"rho", vector_to_json(r.rho)},
          {"active_set", r.active_set},
          {"max_violation", r.max_violation},
          {"assumption_d", r.assumption_d},
          {"vacuous", r.vacuous}};
}

}  // namespace lpgftw
