#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "lpgftw/baselines.hpp"
#include "lpgftw/diagnostics.hpp"
#include "lpgftw/env.hpp"

using namespace lpgftw;
using lpgftw::testing::fd_gradient;
using lpgftw::testing::randm;
using lpgftw::testing::random_neg_def;
using lpgftw::testing::rel_err;

namespace {

std::vector<TaskRecord> random_records(int n, int d, int k, Rng& rng) {
  std::vector<TaskRecord> recs;
  for (int i = 0; i < n; ++i) {
    TaskRecord r;
    r.task_id = i;
    r.s = randn(k, rng);
    r.alpha = randn(d, rng);
    r.H = random_neg_def(d, rng);
    r.g = randn(d, rng);
    recs.push_back(r);
  }
  return recs;
}

Matrix solved_L(std::vector<TaskRecord>& recs, int d, int k, double lambda) {
  KnowledgeBase kb = KnowledgeBase::empty(d, k, lambda, 0.0);
  for (int j = 0; j < k; ++j) kb.append_column(Vector::Zero(d));
  kb.phase = KbPhase::Main;
  for (auto& r : recs) add_task_to_accumulators(kb, r);
  return solve_L(kb);
}

std::shared_ptr<const TaskFamilySpec> two_state_family(double variation) {
  Matrix A(2, 2), B(2, 1);
  A << 1.0, 0.2, -0.1, 0.9;
  B << 0.2, 1.0;
  return std::make_shared<const TaskFamilySpec>(
      lqr_family(A, B, Matrix::Identity(2, 2), Matrix::Identity(1, 1), variation, 50));
}

std::vector<PolicyParams> oracle_policies(const std::vector<TaskInstance>& tasks, double gamma) {
  std::vector<PolicyParams> out;
  for (const auto& t : tasks) {
    PolicyParams p = optimal_lqr_policy(t, gamma);
    p.sigma = 0.2;
    out.push_back(p);
  }
  return out;
}

}  // namespace

TEST_CASE("stability series of identical snapshots after the first is zero") {
  const Matrix L = Matrix::Constant(3, 2, 0.7);
  const StabilitySeries s = stability_series({L, L, L, L}, 1);
  CHECK(s.diffs[0] == doctest::Approx(L.norm()));
  for (std::size_t t = 1; t < s.diffs.size(); ++t) {
    CHECK(s.diffs[t] == 0.0);
    CHECK(s.scaled[t] == 0.0);
  }
}

TEST_CASE("stability series of an O(1/t) drift is bounded by its step size") {
  Rng rng(1);
  const Matrix L0 = randm(4, 2, rng), U = randm(4, 2, rng);
  std::vector<Matrix> harmonic, inverse;
  double h = 0.0;
  for (int t = 1; t <= 40; ++t) {
    h += 1.0 / t;
    harmonic.push_back(L0 + h * U);  // consecutive steps are exactly U / t
    inverse.push_back(L0 + U / t);
  }
  const StabilitySeries sh = stability_series(harmonic, 2);
  for (std::size_t t = 1; t < sh.scaled.size(); ++t)
    CHECK(sh.scaled[t] == doctest::Approx(U.norm()).epsilon(1e-12));
  CHECK(stability_trend_ratio(sh, 10) == doctest::Approx(1.0));

  const StabilitySeries si = stability_series(inverse, 2);
  for (std::size_t t = 1; t < si.scaled.size(); ++t) CHECK(si.scaled[t] <= U.norm() + 1e-12);
  CHECK(si.max_scaled_after_init <= U.norm());
}

TEST_CASE("stability series zero-pads growing dictionaries") {
  Matrix a = Matrix::Zero(2, 1), b = Matrix::Zero(2, 2);
  a(0, 0) = 1.0;
  b(0, 0) = 1.0;
  b(1, 1) = 2.0;
  const StabilitySeries s = stability_series({a, b}, 2);
  CHECK(s.diffs[1] == doctest::Approx(2.0));
}

TEST_CASE("maximizer optimality check examples") {
  Rng rng(2);
  const Matrix L = randm(4, 2, rng);
  const Vector s = randn(2, rng);
  const OptimalityReport r = check_lemma2(L, s, L * s, random_neg_def(4, rng), Vector::Zero(4), 0.0);
  CHECK(r.rho.isZero(0.0));
  CHECK(r.max_violation == 0.0);
  CHECK(r.active_set.size() == 2);
}

TEST_CASE("maximizer optimality check is exact at a coordinate-wise maximizer of hat_ell") {
  // hat_ell's linear term shifts the expansion point: maximizing it in s is the
  // PG-ELLA problem at alpha - H^{-1} g / 2.
  Rng rng(3);
  int active = 0, inactive = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const int d = 3 + static_cast<int>(rng() % 3), k = 1 + static_cast<int>(rng() % 3);
    const Matrix L = randm(d, k, rng);
    const Vector alpha = randn(d, rng), g = randn(d, rng);
    const Matrix H = random_neg_def(d, rng);
    const double mu = 0.3 * std::abs(randn(1, rng)[0]);
    const Vector shifted = alpha - 0.5 * H.ldlt().solve(g);
    const Vector s = pg_ella_coefficients(L, shifted, H, mu, 1e-12);
    const OptimalityReport r = check_lemma2(L, s, alpha, H, g, mu);
    CHECK(r.max_violation <= 1e-10);
    active += static_cast<int>(r.active_set.size());
    inactive += k - static_cast<int>(r.active_set.size());

    Vector bumped = s;
    bumped[0] += 0.5;
    CHECK(check_lemma2(L, bumped, alpha, H, g, mu).max_violation > r.max_violation);
  }
  CHECK(active > 0);
  CHECK(inactive > 0);
}

TEST_CASE("curvature bound examples") {
  const AssumptionD a = check_assumption_d(Matrix::Identity(3, 3), -Matrix::Identity(3, 3), Vector::Ones(3));
  CHECK(a.value == doctest::Approx(-1.0));
  CHECK_FALSE(a.vacuous);

  Matrix H = Matrix::Zero(2, 2);
  H(0, 0) = -1.0;
  H(1, 1) = -2.0;
  CHECK(check_assumption_d(Matrix(Vector::Unit(2, 0)), H, Vector::Ones(1)).value ==
        doctest::Approx(-1.0));

  const AssumptionD v = check_assumption_d(Matrix::Identity(2, 2), H, Vector::Zero(2));
  CHECK(v.vacuous);
  CHECK(v.value == 0.0);

  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix L = randm(5, 3, rng);
    CHECK(check_assumption_d(L, npg_hessian(testing::random_spd(5, rng, 0.1), 0.3), randn(3, rng)).value < 0.0);
  }
}

TEST_CASE("surrogate gradient matches finite differences") {
  Rng rng(5);
  auto recs = random_records(3, 3, 2, rng);
  const Matrix L = randm(3, 2, rng);
  const Vector x = Eigen::Map<const Vector>(L.data(), L.size());
  const Vector fd = fd_gradient(
      [&](const Vector& v) {
        return surrogate_value(Eigen::Map<const Matrix>(v.data(), 3, 2), recs, 0.1, 0.0);
      },
      x);
  const Matrix G = surrogate_gradient(L, recs, 0.1);
  CHECK(rel_err(Eigen::Map<const Vector>(G.data(), G.size()), fd) <= 1e-6);
}

TEST_CASE("the solved dictionary maximizes the surrogate") {
  Rng rng(6);
  auto one = random_records(1, 4, 2, rng);
  const Matrix L1 = solved_L(one, 4, 2, 1e-2);
  const double best = surrogate_value(L1, one, 1e-2, 0.0);
  for (int i = 0; i < 20; ++i) {
    Matrix R = randm(4, 2, rng);
    R *= L1.norm() / R.norm();
    CHECK(surrogate_value(R, one, 1e-2, 0.0) <= best);
  }

  for (int trial = 0; trial < 20; ++trial) {
    auto recs = random_records(4, 3, 2, rng);
    const Matrix L = solved_L(recs, 3, 2, 1e-3);
    CHECK(surrogate_gradient(L, recs, 1e-3).norm() <= 1e-8 * std::max(1.0, L.norm()));
  }
}

TEST_CASE("larger ridge shrinks the dictionary") {
  Rng rng(7);
  auto recs = random_records(5, 4, 2, rng);
  auto copy = recs;
  const double small = solved_L(recs, 4, 2, 1e-2).norm();
  const double large = solved_L(copy, 4, 2, 1e3).norm();
  CHECK(large < small);
}

TEST_CASE("surrogate series follows snapshots and record prefixes") {
  Rng rng(8);
  auto recs = random_records(3, 3, 2, rng);
  std::vector<Matrix> snaps;
  for (int i = 0; i < 3; ++i) snaps.push_back(randm(3, 2, rng));
  const SurrogateSeries s = surrogate_series(snaps, recs, 0.1, 0.01);
  REQUIRE(s.values.size() == 3);
  for (int t = 0; t < 3; ++t) {
    const std::vector<TaskRecord> prefix(recs.begin(), recs.begin() + t + 1);
    CHECK(s.values[t] == doctest::Approx(surrogate_value(snaps[t], prefix, 0.1, 0.01)));
  }
  CHECK(s.successive.size() == 2);
  CHECK(s.successive[1] == doctest::Approx(std::abs(s.values[2] - s.values[1])));
}

TEST_CASE("diversity gap of identical tasks and policies is zero") {
  Rng rng(9);
  const TaskInstance t = nominal_task(two_state_family(0.1));
  std::vector<TaskInstance> tasks{t, t, t};
  const auto pols = oracle_policies(tasks, 0.99);
  const DiversityGap g = diversity_gap(pols, tasks, 20, 0.99, rng);
  CHECK(std::abs(g.delta) <= 1e-9);
}

TEST_CASE("diversity gap is positive for opposite-sign dynamics") {
  Rng rng(10);
  auto pos = std::make_shared<const TaskFamilySpec>(scalar_lqr_family(1.0, 1.0, 0.1, 50));
  auto neg = std::make_shared<const TaskFamilySpec>(scalar_lqr_family(1.0, -1.0, 0.1, 50));
  std::vector<TaskInstance> tasks{nominal_task(pos, 0), nominal_task(neg, 1)};
  const DiversityGap g = diversity_gap(oracle_policies(tasks, 0.99), tasks, 20, 0.99, rng);
  CHECK(g.delta > 0.0);
}

TEST_CASE("wider variation intervals give a larger diversity gap") {
  int larger = 0;
  for (int seed = 0; seed < 5; ++seed) {
    double deltas[2];
    int i = 0;
    for (double variation : {0.1, 0.5}) {
      Rng rng(400 + seed);
      std::vector<TaskInstance> tasks;
      for (int t = 0; t < 4; ++t) tasks.push_back(sample_task(two_state_family(variation), rng, t));
      deltas[i++] = diversity_gap(oracle_policies(tasks, 0.99), tasks, 30, 0.99, rng).delta;
    }
    MESSAGE("seed " << seed << ": delta 10% = " << deltas[0] << ", delta 50% = " << deltas[1]);
    if (deltas[1] > deltas[0]) ++larger;
  }
  CHECK(larger >= 4);
}
