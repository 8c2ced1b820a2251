#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "helpers.hpp"
#include "lpgftw/env.hpp"
#include "lpgftw/evaluation.hpp"
#include "lpgftw/pg.hpp"

using namespace lpgftw;
using lpgftw::testing::fd_gradient;
using lpgftw::testing::random_spd;

namespace {

std::shared_ptr<const TaskFamilySpec> scalar_family() {
  auto f = scalar_lqr_family(1.0, 1.0, 0.1, 50);
  f.eval_sigma = 0.2;
  return std::make_shared<const TaskFamilySpec>(f);
}

std::shared_ptr<const TaskFamilySpec> two_state_family() {
  Matrix A(2, 2), B(2, 1);
  A << 1.0, 0.2, -0.1, 0.9;
  B << 0.2, 1.0;
  auto f = lqr_family(A, B, Matrix::Identity(2, 2), Matrix::Identity(1, 1), 0.1, 20);
  f.feature_map = FeatureMap::StateBias;
  f.noise_std = 0.05;
  return std::make_shared<const TaskFamilySpec>(f);
}

/// A small batch from a random policy with random advantages.
struct Fixture {
  TaskInstance task;
  PolicyParams p;
  PGBatch batch;
};

Fixture random_batch(std::uint64_t seed, int n_traj = 3) {
  Rng rng(seed);
  Fixture fx{sample_task(two_state_family(), rng), {}, {}};
  const PolicyLayout l = fx.task.policy_layout();
  fx.p = PolicyParams(l, 0.3 * randn(l.d(), rng), 0.4);
  fx.batch = collect_batch(fx.task, fx.p, n_traj, rng);
  for (const auto& t : fx.batch.trajectories) {
    std::vector<double> a;
    for (std::size_t i = 0; i < t.size(); ++i) a.push_back(randn(1, rng)[0]);
    fx.batch.advantages.push_back(a);
  }
  return fx;
}

/// (1/N_traj) sum log pi(x, u) A for fixed (x, u, A).
double surrogate(const PGBatch& b, const PolicyParams& p, const Vector& theta) {
  const PolicyParams q(p.layout, theta, p.sigma);
  double s = 0.0;
  for (std::size_t n = 0; n < b.trajectories.size(); ++n) {
    const auto& t = b.trajectories[n];
    for (std::size_t i = 0; i < t.size(); ++i)
      s += log_prob(q, make_features(p.layout.feature_map, t.states[i]), t.actions[i]) *
           b.advantages[n][i];
  }
  return s / static_cast<double>(b.trajectories.size());
}

PGBatch one_step_batch(const Vector& x, const Vector& u, double adv) {
  PGBatch b;
  Trajectory t;
  t.states.push_back(x);
  t.actions.push_back(u);
  t.rewards.push_back(0.0);
  t.log_probs.push_back(0.0);
  b.trajectories.push_back(t);
  b.advantages.push_back({adv});
  return b;
}

}  // namespace

TEST_CASE("value baseline: zero rewards give zero weights") {
  Rng rng(1);
  const TaskInstance t = sample_task(two_state_family(), rng);
  const PolicyParams p = PolicyParams::zeros(t.policy_layout(), 0.3);
  PGBatch b = collect_batch(t, p, 3, rng);
  for (auto& tr : b.trajectories) std::fill(tr.rewards.begin(), tr.rewards.end(), 0.0);
  CHECK(fit_value_baseline(b, 0.99).weights.isZero(1e-14));
}

TEST_CASE("value baseline: constant reward with gamma 0 is fit by the bias") {
  Rng rng(2);
  const TaskInstance t = sample_task(two_state_family(), rng);
  PGBatch b = collect_batch(t, PolicyParams::zeros(t.policy_layout(), 0.3), 1, rng);
  std::fill(b.trajectories[0].rewards.begin(), b.trajectories[0].rewards.end(), 1.0);
  const ValueBaseline v = fit_value_baseline(b, 0.0);
  const Eigen::Index n = v.weights.size();
  CHECK(v.weights[n - 1] == doctest::Approx(1.0).epsilon(1e-3));
  CHECK(v.weights.head(n - 1).cwiseAbs().maxCoeff() < 1e-3);
}

TEST_CASE("value baseline fits no worse than the zero predictor") {
  Rng rng(3);
  const TaskInstance t = sample_task(two_state_family(), rng);
  const PGBatch b = collect_batch(t, PolicyParams(t.policy_layout(), randn(3, rng), 0.5), 5, rng);
  const ValueBaseline v = fit_value_baseline(b, 0.95);
  double fit = 0.0, zero = 0.0;
  for (const auto& tr : b.trajectories) {
    double G = 0.0;
    std::vector<double> rtg(tr.size());
    for (std::size_t i = tr.size(); i-- > 0;) rtg[i] = G = tr.rewards[i] + 0.95 * G;
    for (std::size_t i = 0; i < tr.size(); ++i) {
      fit += std::pow(rtg[i] - v.predict(tr.states[i], i, tr.size()), 2);
      zero += rtg[i] * rtg[i];
    }
  }
  CHECK(fit <= zero);
}

TEST_CASE("GAE limits with a zero baseline") {
  Rng rng(4);
  const TaskInstance t = sample_task(two_state_family(), rng);
  const PGBatch b = collect_batch(t, PolicyParams::zeros(t.policy_layout(), 0.3), 1, rng);
  const Trajectory& tr = b.trajectories[0];
  ValueBaseline zero{Vector::Zero(value_features(tr.states[0], 0, tr.size()).size())};
  const double gamma = 0.9;
  const auto a1 = gae_advantages(tr, zero, gamma, 1.0);
  double G = 0.0;
  for (std::size_t i = tr.size(); i-- > 0;) {
    G = tr.rewards[i] + gamma * G;
    CHECK(a1[i] == doctest::Approx(G).epsilon(1e-12));
  }
  const auto a0 = gae_advantages(tr, zero, gamma, 0.0);
  for (std::size_t i = 0; i < tr.size(); ++i) CHECK(a0[i] == doctest::Approx(tr.rewards[i]));
}

TEST_CASE("GAE matches a brute-force double sum") {
  Rng rng(5);
  const TaskInstance t = sample_task(two_state_family(), rng);
  const PGBatch b = collect_batch(t, PolicyParams(t.policy_layout(), randn(3, rng), 0.5), 2, rng);
  const ValueBaseline v = fit_value_baseline(b, 0.97);
  for (const auto& tr : b.trajectories) {
    const double gamma = 0.97, lam = 0.8;
    const auto adv = gae_advantages(tr, v, gamma, lam);
    const std::size_t T = tr.size();
    auto V = [&](std::size_t i) { return i < T ? v.predict(tr.states[i], i, T) : 0.0; };
    for (std::size_t i = 0; i < T; ++i) {
      double ref = 0.0;
      for (std::size_t j = i; j < T; ++j) {
        const double delta = tr.rewards[j] + gamma * V(j + 1) - V(j);
        ref += std::pow(gamma * lam, static_cast<double>(j - i)) * delta;
      }
      CHECK(std::abs(adv[i] - ref) <= 1e-10 * std::max(1.0, std::abs(ref)));
    }
  }
}

TEST_CASE("advantage normalization gives mean 0 and std 1") {
  Fixture fx = random_batch(6);
  normalize_advantages(fx.batch);
  double s = 0.0, ss = 0.0, n = 0.0;
  for (const auto& a : fx.batch.advantages)
    for (double x : a) {
      s += x;
      ss += x * x;
      n += 1;
    }
  CHECK(std::abs(s / n) < 1e-12);
  CHECK(std::sqrt(ss / n - (s / n) * (s / n)) == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("policy gradient examples") {
  Fixture fx = random_batch(7);
  for (auto& a : fx.batch.advantages) std::fill(a.begin(), a.end(), 0.0);
  CHECK(pg_gradient(fx.batch, fx.p).isZero(0.0));

  Rng rng(8);
  const Vector x = randn(3, rng), u = randn(1, rng);
  const PolicyParams p(PolicyLayout{1, 3}, randn(3, rng), 0.7);
  CHECK((pg_gradient(one_step_batch(x, u, 1.0), p) - grad_log_prob(p, x, u)).norm() <= 1e-14);
}

TEST_CASE("policy gradient matches finite differences of the fixed-batch surrogate") {
  for (std::uint64_t seed = 10; seed < 15; ++seed) {
    Fixture fx = random_batch(seed);
    const Vector g = pg_gradient(fx.batch, fx.p);
    const Vector fd = fd_gradient([&](const Vector& th) { return surrogate(fx.batch, fx.p, th); },
                                  fx.p.theta);
    CHECK((g - fd).norm() <= 1e-6 * g.norm());
  }
}

TEST_CASE("gradient requires advantages") {
  Fixture fx = random_batch(16);
  fx.batch.advantages.clear();
  CHECK_THROWS_AS(pg_gradient(fx.batch, fx.p), Error);
  CHECK_THROWS_AS(reinforce_hessian(fx.batch, fx.p), Error);
}

TEST_CASE("Fisher examples") {
  NPGConfig cfg;
  const PolicyParams p(PolicyLayout{1, 3}, Vector::Zero(3), 0.5);
  const PGBatch zero = one_step_batch(Vector::Zero(3), Vector::Ones(1), 0.0);
  CHECK((fisher(zero, p, cfg) - cfg.fisher_damping * Matrix::Identity(3, 3)).norm() < 1e-20);

  Rng rng(17);
  const Vector x = randn(3, rng), u = randn(1, rng);
  const Vector v = grad_log_prob(p, x, u);
  const Matrix raw = v * v.transpose();
  const double damping = cfg.fisher_damping_rel * raw.trace() / 3.0 + cfg.fisher_damping;
  CHECK((fisher(one_step_batch(x, u, 0.0), p, cfg) - raw - damping * Matrix::Identity(3, 3)).norm() <=
        1e-12 * raw.norm());
}

TEST_CASE("Fisher is symmetric with eigenvalues above the damping") {
  NPGConfig cfg;
  for (std::uint64_t seed = 20; seed < 25; ++seed) {
    Fixture fx = random_batch(seed);
    const Matrix F = fisher(fx.batch, fx.p, cfg);
    CHECK((F - F.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
    Eigen::SelfAdjointEigenSolver<Matrix> es(F);
    CHECK(es.eigenvalues().minCoeff() >= fisher_damping(fisher_raw(fx.batch, fx.p), cfg) - 1e-10);
  }
}

TEST_CASE("NPG step examples") {
  Vector e1 = Vector::Unit(3, 0);
  NpgStep s = npg_step(e1, Matrix::Identity(3, 3), 1.0);
  CHECK((s.step - e1).norm() < 1e-14);
  CHECK(s.eta == doctest::Approx(1.0));
  s = npg_step(e1, 4.0 * Matrix::Identity(3, 3), 1.0);
  CHECK(s.eta == doctest::Approx(2.0));
  CHECK((s.step - 0.5 * e1).norm() < 1e-14);
  CHECK(s.step.dot(4.0 * s.step) == doctest::Approx(1.0));
  s = npg_step(Vector::Zero(3), Matrix::Identity(3, 3), 1.0);
  CHECK(s.vanished);
  CHECK(s.eta == 0.0);
  CHECK(s.step.isZero(0.0));
}

TEST_CASE("NPG steps satisfy the trust-region constraint") {
  Rng rng(26);
  for (int trial = 0; trial < 100; ++trial) {
    const int d = 1 + static_cast<int>(rng() % 8);
    const Matrix F = random_spd(d, rng, 1e-3);
    const Vector g = randn(d, rng);
    const double delta = 0.01 + std::abs(randn(1, rng)[0]);
    const NpgStep s = npg_step(g, F, delta);
    CHECK(std::abs(s.step.dot(F * s.step) - delta) <= 1e-8 * delta);
  }
}

TEST_CASE("REINFORCE Hessian examples") {
  Fixture fx = random_batch(27);
  for (auto& a : fx.batch.advantages) std::fill(a.begin(), a.end(), 0.0);
  CHECK(reinforce_hessian(fx.batch, fx.p).isZero(0.0));

  const PolicyParams p(PolicyLayout{1, 3}, Vector::Zero(3), 1.0);
  const Matrix H = reinforce_hessian(one_step_batch(Vector::Unit(3, 0), Vector::Zero(1), 1.0), p);
  Matrix ref = Matrix::Zero(3, 3);
  ref(0, 0) = -0.5;
  CHECK((H - ref).norm() < 1e-15);
}

TEST_CASE("REINFORCE Hessian is half the finite-difference Hessian of the surrogate") {
  // The curvature entering the second-order expansion is (1/2) E[grad^2 log pi * A].
  for (std::uint64_t seed = 30; seed < 34; ++seed) {
    Fixture fx = random_batch(seed);
    const Matrix H = reinforce_hessian(fx.batch, fx.p);
    const int d = fx.p.layout.d();
    const double h = 1e-3;
    auto S = [&](const Vector& th) { return surrogate(fx.batch, fx.p, th); };
    Matrix fd(d, d);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) {
        Vector pp = fx.p.theta, pm = pp, mp = pp, mm = pp;
        pp[i] += h; pp[j] += h;
        pm[i] += h; pm[j] -= h;
        mp[i] -= h; mp[j] += h;
        mm[i] -= h; mm[j] -= h;
        fd(i, j) = (S(pp) - S(pm) - S(mp) + S(mm)) / (4 * h * h);
      }
    CHECK((H - 0.5 * fd).norm() <= 1e-4 * H.norm());
  }
}

TEST_CASE("NPG Hessian examples") {
  CHECK((npg_hessian(Matrix::Identity(2, 2), 2.0) + 0.5 * Matrix::Identity(2, 2)).norm() < 1e-15);
  try {
    npg_hessian(Matrix::Identity(2, 2), 0.0);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::NoStepTaken);
  }
  Rng rng(35);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix F = random_spd(5, rng, 1e-2);
    const double eta = 0.01 + std::abs(randn(1, rng)[0]);
    const Matrix H = npg_hessian(F, eta);
    Eigen::SelfAdjointEigenSolver<Matrix> eh(H), ef(F);
    CHECK(eh.eigenvalues().maxCoeff() < 0.0);
    Vector expect = -ef.eigenvalues() / eta;
    std::sort(expect.data(), expect.data() + expect.size());
    CHECK((eh.eigenvalues() - expect).cwiseAbs().maxCoeff() <= 1e-10 * expect.cwiseAbs().maxCoeff());
  }
}

TEST_CASE("grad_and_hess_at returns a negative definite NPG Hessian and is deterministic") {
  Rng rng(36);
  const TaskInstance t = sample_task(two_state_family(), rng);
  const PolicyParams p(t.policy_layout(), 0.1 * randn(3, rng), 0.3);
  NPGConfig cfg;
  Rng a(5), b(5);
  const GradHess g1 = grad_and_hess_at(t, p, cfg, 10, a);
  const GradHess g2 = grad_and_hess_at(t, p, cfg, 10, b);
  CHECK(max_sym_eigenvalue(g1.H) < 0.0);
  CHECK(g1.g == g2.g);
  CHECK(g1.H == g2.H);
  CHECK(g1.env_steps == 10 * t.horizon);
}

TEST_CASE("NPG config validation") {
  NPGConfig c;
  c.delta = 0.0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = NPGConfig{};
  c.gamma = 1.0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = NPGConfig{};
  c.gae_lambda = 1.5;
  CHECK_THROWS_AS(c.validate(), Error);
  c = NPGConfig{};
  c.fisher_damping = 0.0;
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("zero iterations leave the policy unchanged") {
  Rng rng(37);
  const TaskInstance t = sample_task(scalar_family(), rng);
  const PolicyParams p0(t.policy_layout(), Vector::Constant(1, -0.2), 0.2);
  const TrainResult r = stl_train(t, p0, NPGConfig{}, 0, 10, rng);
  CHECK(r.policy.theta == p0.theta);
  CHECK(r.curve.empty());
}

TEST_CASE("STL is deterministic under a fixed seed") {
  Rng rng(38);
  const TaskInstance t = sample_task(scalar_family(), rng);
  const PolicyParams p0 = PolicyParams::zeros(t.policy_layout(), 0.2);
  Rng a(9), b(9);
  const TrainResult r1 = stl_train(t, p0, NPGConfig{}, 10, 5, a);
  const TrainResult r2 = stl_train(t, p0, NPGConfig{}, 10, 5, b);
  CHECK(r1.curve == r2.curve);
  CHECK(r1.policy.theta == r2.policy.theta);
  CHECK(r1.max_constraint_error <= 1e-8);
}

TEST_CASE("STL improves the scalar lqr return in most seeds") {
  int improved = 0;
  for (int seed = 0; seed < 5; ++seed) {
    Rng rng(100 + seed);
    const TaskInstance t = sample_task(scalar_family(), rng);
    const TrainResult r = stl_train(t, PolicyParams::zeros(t.policy_layout(), 0.2), NPGConfig{},
                                    50, 10, rng);
    double first = 0.0, last = 0.0;
    for (int i = 0; i < 10; ++i) {
      first += r.curve[i];
      last += r.curve[40 + i];
    }
    if (last > first) ++improved;
  }
  CHECK(improved >= 4);
}

TEST_CASE("learned sigma stays positive and moves") {
  Rng rng(39);
  const TaskInstance t = sample_task(scalar_family(), rng);
  NPGConfig cfg;
  cfg.learn_sigma = true;
  const TrainResult r = stl_train(t, PolicyParams::zeros(t.policy_layout(), 0.5), cfg, 10, 5, rng);
  CHECK(r.policy.sigma > 0.0);
  CHECK(r.policy.sigma != 0.5);
}

TEST_CASE("STL on the scalar lqr reaches the Riccati return within 15% in the median seed") {
  std::vector<double> gaps;
  const NPGConfig cfg;
  for (int seed = 0; seed < 5; ++seed) {
    Rng rng(200 + seed);
    const TaskInstance t = sample_task(scalar_family(), rng);
    const TrainResult r =
        stl_train(t, PolicyParams::zeros(t.policy_layout(), 0.2), cfg, 50, 10, rng);
    PolicyParams opt = optimal_lqr_policy(t, cfg.gamma);
    opt.sigma = 0.2;
    Rng e1(900 + seed), e2(900 + seed);
    const double j_stl = evaluate_policy(t, r.policy, 200, cfg.gamma, e1).mean;
    const double j_opt = evaluate_policy(t, opt, 200, cfg.gamma, e2).mean;
    gaps.push_back(std::abs(j_stl - j_opt) / std::abs(j_opt));
  }
  std::sort(gaps.begin(), gaps.end());
  MESSAGE("median relative gap " << gaps[2]);
  CHECK(gaps[2] <= 0.15);
}
