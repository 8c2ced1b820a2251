// Acceptance checks. Prints one PASS/FAIL line per criterion and exits nonzero
// if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "lpgftw/baselines.hpp"
#include "lpgftw/diagnostics.hpp"
#include "lpgftw/evaluation.hpp"
#include "lpgftw/harness.hpp"

using namespace lpgftw;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

Matrix randm(int r, int c, Rng& rng) {
  Matrix m(r, c);
  for (int j = 0; j < c; ++j) m.col(j) = randn(r, rng);
  return m;
}

Matrix random_neg_def(int n, Rng& rng) {
  const Matrix a = randm(n, n, rng);
  return -(a * a.transpose() / n + 0.5 * Matrix::Identity(n, n));
}

Vector fd_gradient(const std::function<double(const Vector&)>& f, const Vector& x, double h) {
  Vector g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Vector a = x, b = x;
    a[i] += h;
    b[i] -= h;
    g[i] = (f(a) - f(b)) / (2 * h);
  }
  return g;
}

ExperimentConfig config(const std::string& name) {
  return load_config(fs::path(LPGFTW_SOURCE_DIR) / "configs" / name);
}

std::map<std::int64_t, std::vector<TaskRow>> rows_by_seed(const LifelongMetrics& m) {
  std::map<std::int64_t, std::vector<TaskRow>> out;
  for (const auto& s : m.seeds)
    for (const auto& r : s.rows) out[s.seed].push_back(r);
  return out;
}

// ---------------------------------------------------------------------------
// Exact discounted return of an affine Gaussian policy on an lqr task, from the
// state mean and covariance recursions. Independent of the sampling code.

struct ExactLqr {
  const TaskInstance& task;
  PolicyLayout layout;
  double sigma;
  double gamma;

  Matrix weights(const Vector& theta) const {
    Matrix W(layout.action_dim, layout.feature_dim);
    for (int j = 0; j < layout.action_dim; ++j)
      for (int i = 0; i < layout.feature_dim; ++i) W(j, i) = theta[j * layout.feature_dim + i];
    return W;
  }

  template <class Visit>
  void walk(const Vector& theta, Visit&& visit) const {
    const int n = task.state_dim();
    const Matrix W = weights(theta);
    const Matrix K = W.leftCols(n);
    const Vector b = layout.feature_map == FeatureMap::StateBias ? Vector(W.col(n))
                                                                 : Vector::Zero(task.action_dim());
    Vector mu = task.init_mean;
    Matrix S = task.init_spread * task.init_spread * Matrix::Identity(n, n);
    const Matrix Ac = task.A + task.B * K;
    double disc = 1.0;
    for (int t = 0; t < task.horizon; ++t) {
      visit(mu, S, K, b, disc);
      mu = task.A * mu + task.B * (K * mu + b);
      S = Ac * S * Ac.transpose() + sigma * sigma * task.B * task.B.transpose() +
          task.noise_std * task.noise_std * Matrix::Identity(n, n);
      disc *= gamma;
    }
  }

  double value(const Vector& theta) const {
    double J = 0.0;
    walk(theta, [&](const Vector& mu, const Matrix& S, const Matrix& K, const Vector& b, double disc) {
      const Vector um = K * mu + b;
      const double state_cost = (task.Q * S).trace() + mu.dot(task.Q * mu);
      const double action_cost = (task.R * (K * S * K.transpose())).trace() +
                                 sigma * sigma * task.R.trace() + um.dot(task.R * um);
      J -= disc * (state_cost + action_cost);
    });
    return J;
  }

  /// Per-trajectory Fisher: sum_t E[phi phi'] / sigma^2 on each action row.
  Matrix fisher(const Vector& theta) const {
    const int n = task.state_dim(), f = layout.feature_dim;
    Matrix E = Matrix::Zero(f, f);
    walk(theta, [&](const Vector& mu, const Matrix& S, const Matrix&, const Vector&, double) {
      E.topLeftCorner(n, n) += S + mu * mu.transpose();
      if (layout.feature_map == FeatureMap::StateBias) {
        E.block(0, n, n, 1) += mu;
        E.block(n, 0, 1, n) += mu.transpose();
        E(n, n) += 1.0;
      }
    });
    Matrix F = Matrix::Zero(layout.d(), layout.d());
    for (int j = 0; j < layout.action_dim; ++j) F.block(j * f, j * f, f, f) = E / (sigma * sigma);
    return F;
  }

  Vector gradient(const Vector& theta) const {
    return fd_gradient([&](const Vector& th) { return value(th); }, theta, 1e-5);
  }
};

// ---------------------------------------------------------------------------

Outcome criterion1() {
  const auto t0 = Clock::now();
  Rng rng(101);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const int d = 1 + static_cast<int>(rng() % 6), k = 1 + static_cast<int>(rng() % 2);
    const int T = 1 + static_cast<int>(rng() % 4);
    const double lambda = 1e-5;
    KnowledgeBase kb = KnowledgeBase::empty(d, k, lambda, 0.0);
    for (int j = 0; j < k; ++j) kb.append_column(Vector::Zero(d));
    kb.phase = KbPhase::Main;
    // dense quadratic in x = vec(L): x'Qx + c'x, maps L -> L s assembled entry by entry
    const int n = d * k;
    Matrix Q = -lambda * Matrix::Identity(n, n);
    Vector c = Vector::Zero(n);
    for (int t = 0; t < T; ++t) {
      TaskRecord r;
      r.task_id = t;
      r.s = randn(k, rng);
      r.alpha = randn(d, rng);
      r.H = random_neg_def(d, rng);
      r.g = randn(d, rng);
      add_task_to_accumulators(kb, r);
      Matrix M = Matrix::Zero(d, n);
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < k; ++j) M(i, j * d + i) = r.s[j];
      Q += M.transpose() * r.H * M / T;
      c += M.transpose() * (r.g - 2.0 * r.H * r.alpha) / T;
    }
    const Vector x = Q.fullPivLu().solve(-0.5 * c);
    const Matrix ref = Eigen::Map<const Matrix>(x.data(), d, k);
    worst = std::max(worst, (solve_L(kb) - ref).norm() / ref.norm());
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-6 && secs < 10.0,
          "max relative Frobenius error " + fmt("%.2e", worst) + " over 50 instances in " +
              fmt("%.2f", secs) + " s"};
}

Outcome criterion2() {
  const auto t0 = Clock::now();
  Matrix A(2, 2), B(2, 1);
  A << 1.0, 0.2, -0.1, 0.9;
  B << 0.2, 1.0;
  auto fam = lqr_family(A, B, Matrix::Identity(2, 2), Matrix::Identity(1, 1), 0.1, 20);
  fam.feature_map = FeatureMap::StateBias;
  fam.noise_std = 0.05;
  const auto family = std::make_shared<const TaskFamilySpec>(fam);

  double g_err = 0.0, h_err = 0.0, e_err = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(200 + seed);
    const TaskInstance task = sample_task(family, rng);
    const PolicyLayout l = task.policy_layout();
    const PolicyParams p(l, 0.3 * randn(l.d(), rng), 0.4);
    PGBatch batch = collect_batch(task, p, 4, rng);
    for (const auto& t : batch.trajectories) {
      std::vector<double> a;
      for (std::size_t i = 0; i < t.size(); ++i) a.push_back(randn(1, rng)[0]);
      batch.advantages.push_back(a);
    }
    auto S = [&](const Vector& th) {
      const PolicyParams q(l, th, p.sigma);
      double s = 0.0;
      for (std::size_t n = 0; n < batch.trajectories.size(); ++n) {
        const auto& t = batch.trajectories[n];
        for (std::size_t i = 0; i < t.size(); ++i)
          s += log_prob(q, make_features(l.feature_map, t.states[i]), t.actions[i]) *
               batch.advantages[n][i];
      }
      return s / static_cast<double>(batch.trajectories.size());
    };
    const Vector g = pg_gradient(batch, p);
    g_err = std::max(g_err, (g - fd_gradient(S, p.theta, 1e-5)).norm() / g.norm());

    // second-order expansion curvature: half the Hessian of the surrogate
    const int d = l.d();
    const double h = 1e-3;
    Matrix fd(d, d);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) {
        Vector pp = p.theta, pm = pp, mp = pp, mm = pp;
        pp[i] += h; pp[j] += h;
        pm[i] += h; pm[j] -= h;
        mp[i] -= h; mp[j] += h;
        mm[i] -= h; mm[j] -= h;
        fd(i, j) = (S(pp) - S(pm) - S(mp) + S(mm)) / (4 * h * h);
      }
    const Matrix H = reinforce_hessian(batch, p);
    h_err = std::max(h_err, (H - 0.5 * fd).norm() / H.norm());

    for (const auto& v : all_ewc_variants()) {
      EwcState st = EwcState::fresh(v, 0.5, l, 0.4);
      const int anchors = v.form == EwcForm::Huszar ? 1 : 3;
      for (int a = 0; a < anchors; ++a) st.anchors.push_back({randn(d, rng), random_neg_def(d, rng)});
      const Vector th = randn(d, rng);
      const Vector eg = ewc_penalty_grad(st, th, 4).grad;
      const Vector efd =
          fd_gradient([&](const Vector& x) { return ewc_penalty_grad(st, x, 4).penalty; }, th, 1e-5);
      e_err = std::max(e_err, (eg - efd).norm() / eg.norm());
    }
  }
  const double secs = seconds_since(t0);
  return {g_err <= 1e-6 && h_err <= 1e-4 && e_err <= 1e-6 && secs < 30.0,
          "pg_gradient " + fmt("%.2e", g_err) + ", reinforce_hessian " + fmt("%.2e", h_err) +
              ", ewc_penalty_grad " + fmt("%.2e", e_err) + " in " + fmt("%.2f", secs) + " s"};
}

Outcome criterion3(const LifelongMetrics& lpg) {
  double constraint = 0.0, max_eig = -std::numeric_limits<double>::infinity();
  bool all_recorded_negative = true;
  for (const auto& s : lpg.seeds) {
    constraint = std::max(constraint, s.diagnostics.max_constraint_error);
    const double e = s.diagnostics.max_hessian_eigenvalue;
    if (!(e < 0.0)) all_recorded_negative = false;
    max_eig = std::max(max_eig, e);
  }
  return {lpg.all_ok() && constraint <= 1e-8 && all_recorded_negative,
          "max |step'F step - delta| / delta " + fmt("%.2e", constraint) +
              ", max Hessian eigenvalue over all recorded tasks " + fmt("%.3e", max_eig)};
}

Outcome criterion4() {
  const auto t0 = Clock::now();
  bool pass = true;
  std::string detail;
  for (const char* name : {"scalar_stl.json", "two_state_stl.json"}) {
    const ExperimentConfig cfg = config(name);
    const LifelongMetrics m = run_lifelong(cfg);
    std::vector<double> gaps;
    for (const auto& s : m.seeds) {
      std::vector<double> stl, opt;
      for (std::size_t i = 0; i < s.rows.size(); ++i) {
        const TaskInstance& task = s.tasks[i];
        PolicyParams oracle = optimal_lqr_policy(task, cfg.npg.gamma);
        oracle.sigma = cfg.family.eval_sigma;
        Rng rng(eval_seed(s.seed, task.task_id));
        opt.push_back(evaluate_policy(task, oracle, cfg.eval_rollouts, cfg.npg.gamma, rng).mean);
        stl.push_back(s.rows[i].final_return);
      }
      gaps.push_back(std::abs(mean(stl) - mean(opt)) / std::abs(mean(opt)));
    }
    const double med = median(gaps);
    pass = pass && m.all_ok() && med <= 0.15;
    detail += std::string(detail.empty() ? "" : ", ") + name + " median gap " + fmt("%.2f%%", 100 * med);
  }
  const double secs = seconds_since(t0);
  return {pass && secs < 120.0, detail + " in " + fmt("%.1f", secs) + " s"};
}

Outcome criterion5(const LifelongMetrics& lpg, const LifelongMetrics& stl, double secs) {
  auto auc = [](const LifelongMetrics& m) {
    std::map<std::int64_t, std::vector<double>> per;
    for (const auto& s : m.seeds)
      for (const auto& c : s.curves)
        if (c.task_index >= m.config.method_params.k) per[s.seed].push_back(c.mean_return);
    std::map<std::int64_t, double> out;
    for (const auto& [seed, v] : per) out[seed] = mean(v);
    return out;
  };
  const auto a = auc(lpg), b = auc(stl);
  int wins = 0;
  std::string per;
  for (const auto& [seed, v] : a) {
    if (v > b.at(seed)) ++wins;
    per += fmt(" %.3f", v) + fmt("/%.3f", b.at(seed));
  }
  return {lpg.all_ok() && stl.all_ok() && wins >= 4 && secs < 900.0,
          "LPG-FTW beats STL in " + std::to_string(wins) + "/5 seeds (AUC lpg/stl:" + per + ")"};
}

Outcome criterion6(const LifelongMetrics& lpg) {
  std::vector<double> diff, tune;
  for (const auto& s : lpg.seeds)
    for (const auto& r : s.rows) {
      diff.push_back(r.update_return - r.tune_return);
      tune.push_back(std::abs(r.tune_return));
    }
  const double rel = mean(diff) / mean(tune);
  return {lpg.all_ok() && rel >= -0.02,
          "mean(update - tune) = " + fmt("%.4f", mean(diff)) + " (" + fmt("%+.3f%%", 100 * rel) +
              " of |tune|) over " + std::to_string(diff.size()) + " tasks"};
}

Outcome criterion7(const LifelongMetrics& lpg, const LifelongMetrics& ewc) {
  auto degradation = [](const LifelongMetrics& m) {
    std::map<std::int64_t, double> out;
    for (const auto& [seed, rows] : rows_by_seed(m)) {
      std::vector<double> d, u;
      for (const auto& r : rows) {
        d.push_back(r.final_return - r.update_return);
        u.push_back(std::abs(r.update_return));
      }
      out[seed] = -mean(d) / mean(u);  // positive = performance lost
    }
    return out;
  };
  std::vector<double> d, u;
  for (const auto& s : lpg.seeds)
    for (const auto& r : s.rows) {
      d.push_back(r.final_return - r.update_return);
      u.push_back(std::abs(r.update_return));
    }
  const double lpg_rel = mean(d) / mean(u);
  const auto dl = degradation(lpg), de = degradation(ewc);
  int worse = 0;
  std::string per;
  for (const auto& [seed, v] : dl) {
    if (de.at(seed) > v) ++worse;
    per += fmt(" %+.2f%%", -100 * v) + fmt("/%+.2f%%", -100 * de.at(seed));
  }
  const bool original = ewc.config.method_params.variant == "1,3";
  return {lpg.all_ok() && ewc.all_ok() && original && lpg_rel >= -0.05 && worse >= 4,
          "LPG-FTW mean(final - update) " + fmt("%+.3f%%", 100 * lpg_rel) +
              " of |update|; EWC (lambda " + fmt("%g", ewc.selected_lambda_ewc) +
              ") degrades more in " + std::to_string(worse) +
              "/5 seeds (final-update lpg/ewc:" + per + ")"};
}

/// Trains s against a fixed dictionary on exact lqr gradients. The trust region
/// grows after a step that improves the penalized exact return and shrinks
/// otherwise. Reports the active-set optimality violation relative to ||g||_inf.
double converged_lemma2(const KnowledgeBase& kb, const TaskInstance& task, const NPGConfig& npg,
                        double sigma, double& assumption_d) {
  const PolicyLayout layout = task.policy_layout();
  const ExactLqr lqr{task, layout, sigma, npg.gamma};
  auto objective = [&](const Vector& c) { return lqr.value(kb.L * c) - kb.mu_reg * c.lpNorm<1>(); };
  Vector s = init_task_coeffs(kb.columns());
  double current = objective(s);
  NPGConfig c = npg;
  c.delta = 1e-1;
  for (int i = 0; i < 5000 && c.delta > 1e-16; ++i) {
    const Vector theta = kb.L * s;
    const CoeffStep st = s_npg_step(kb.L, s, lqr.gradient(theta), lqr.fisher(theta), c, kb.mu_reg);
    const double next = objective(st.s);
    if (!st.vanished && next > current) {
      s = st.s;
      current = next;
      c.delta *= 1.5;
    } else {
      c.delta *= 0.5;
    }
  }
  const Vector theta = kb.L * s;
  const Vector g = lqr.gradient(theta);
  const Matrix H = npg_hessian(add_damping(lqr.fisher(theta), npg), 1.0);
  const OptimalityReport r = check_lemma2(kb.L, s, theta, H, g, kb.mu_reg);
  assumption_d = r.assumption_d;
  return r.max_violation / g.cwiseAbs().maxCoeff();
}

Outcome criterion8(const LifelongMetrics& lpg) {
  const ExperimentConfig& cfg = lpg.config;
  int trend_ok = 0;
  double first_order = 0.0, max_ad = -std::numeric_limits<double>::infinity();
  double worst_l2 = 0.0, in_run_l2 = 0.0, oracle_check = 0.0;
  std::string ratios;
  const auto family = std::make_shared<const TaskFamilySpec>(cfg.family);
  for (const auto& s : lpg.seeds) {
    const auto& d = s.diagnostics;
    if (d.stability_trend_ratio <= 3.0) ++trend_ok;
    ratios += fmt(" %.2f", d.stability_trend_ratio);
    first_order = std::max(first_order, d.max_first_order);
    for (double a : d.assumption_d) max_ad = std::max(max_ad, a);
    for (double v : d.lemma2_relative) in_run_l2 = std::max(in_run_l2, v);

    // (c) converged s on a fresh task against this seed's final dictionary
    const KnowledgeBase kb = kb_from_json(s.checkpoint.at("kb"));
    Rng rng(mix_seed(static_cast<std::uint64_t>(s.seed), 77));
    const TaskInstance task = sample_task(family, rng, 1000);
    double ad = 0.0;
    worst_l2 = std::max(worst_l2, converged_lemma2(kb, task, cfg.npg, cfg.family.eval_sigma, ad));
    max_ad = std::max(max_ad, ad);

    // the exact-return oracle agrees with Monte-Carlo evaluation
    const PolicyParams p(task.policy_layout(), kb.L.col(0), cfg.family.eval_sigma);
    Rng er(5);
    const EvalResult mc = evaluate_policy(task, p, 2000, cfg.npg.gamma, er);
    const double exact = ExactLqr{task, task.policy_layout(), cfg.family.eval_sigma, cfg.npg.gamma}
                             .value(p.theta);
    oracle_check = std::max(oracle_check, std::abs(mc.mean - exact) / mc.std_error);
  }
  const bool a = trend_ok >= 4, b = first_order <= 1e-6, c = worst_l2 <= 1e-2 && oracle_check < 4.0,
             dd = max_ad < 0.0;
  return {lpg.all_ok() && a && b && c && dd,
          std::string("(a) trend ratio <= 3 in ") + std::to_string(trend_ok) + "/5 seeds (" +
              ratios.substr(1) + "); (b) max first-order residual " + fmt("%.2e", first_order) +
              "; (c) converged-s violation " + fmt("%.2e", worst_l2) +
              " of ||g||_inf (exact-return oracle within " + fmt("%.1f", oracle_check) +
              " SE of Monte Carlo; in-run sampled-gradient value " + fmt("%.2f", in_run_l2) +
              "); (d) max projected-curvature eigenvalue " + fmt("%.3e", max_ad)};
}

Outcome criterion9(const LifelongMetrics& lpg, const LifelongMetrics& stl) {
  const LifelongMetrics lpg2 = run_lifelong(lpg.config, false);
  const LifelongMetrics stl2 = run_lifelong(stl.config, false);
  const bool same = metrics_csv(lpg) == metrics_csv(lpg2) && curves_csv(lpg) == curves_csv(lpg2) &&
                    metrics_csv(stl) == metrics_csv(stl2) && curves_csv(stl) == curves_csv(stl2);
  return {same, same ? "lifelong_metrics.csv and curves.csv byte-identical across reruns (lpg_ftw, stl)"
                     : "CSV outputs differ between reruns"};
}

Outcome criterion10(const LifelongMetrics& ella, const LifelongMetrics& stl) {
  const ExperimentConfig& cfg = ella.config;
  const bool harness_curves = curves_csv(ella) == curves_csv(stl);

  // direct stage-one comparison and sparse-coding optimality over one task sequence
  const std::vector<TaskInstance> tasks = draw_tasks(cfg, cfg.seeds.front());
  LpgConfig lc;
  lc.k = cfg.method_params.k;
  lc.lambda = cfg.method_params.lambda;
  lc.mu = cfg.method_params.mu;
  PgEllaState st = PgEllaState::fresh(cfg.family.policy_layout(), cfg.family.eval_sigma, lc);
  bool curves_equal = true;
  double worst = 0.0;
  int coded = 0;
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    const Matrix L_before = st.kb.L;
    const bool main_phase = st.kb.phase == KbPhase::Main;
    Rng a(900 + t), b(900 + t);
    const PgEllaOutcome o = pg_ella_train(tasks[t], st, cfg.npg, cfg.n_iters, cfg.traj_per_iter, a);
    const TrainResult r = stl_train(tasks[t], PolicyParams::zeros(st.layout, st.sigma), cfg.npg,
                                    cfg.n_iters, cfg.traj_per_iter, b);
    curves_equal = curves_equal && o.stl.curve == r.curve;
    if (!main_phase) continue;
    ++coded;
    const Vector& s = o.record.s;
    const Vector rho = 2.0 * L_before.transpose() * o.record.H * (L_before * s - o.record.alpha);
    const double mu = lc.mu;
    for (Eigen::Index j = 0; j < s.size(); ++j) {
      const double v = s[j] == 0.0 ? std::max(0.0, std::abs(rho[j]) - mu)
                                   : std::abs(rho[j] - mu * (s[j] > 0 ? 1.0 : -1.0));
      worst = std::max(worst, v);
    }
  }
  return {harness_curves && curves_equal && worst <= 1e-6,
          std::string("stage-1 curves ") + (harness_curves && curves_equal ? "bit-identical" : "DIFFER") +
              " to STL; max rho-condition violation " + fmt("%.2e", worst) + " over " +
              std::to_string(coded) + " sparse codings"};
}

}  // namespace

int main() {
  int failed = 0;
  auto report = [&](int id, const std::string& name, const Outcome& o) {
    std::printf("%s %2d %s: %s\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), o.detail.c_str());
    std::fflush(stdout);
    if (!o.pass) ++failed;
  };
  try {
    report(1, "keystone oracle equivalence", criterion1());
    report(2, "gradient and Hessian correctness", criterion2());

    const auto t_lpg = Clock::now();
    const LifelongMetrics lpg = run_lifelong(config("lqr4_lpg_ftw.json"));
    const double lpg_secs = seconds_since(t_lpg);
    const auto t_stl = Clock::now();
    const LifelongMetrics stl = run_lifelong(config("lqr4_stl.json"));
    const double stl_secs = seconds_since(t_stl);
    const LifelongMetrics ewc = run_lifelong(config("lqr4_ewc.json"));
    const LifelongMetrics ella = run_lifelong(config("lqr4_pg_ella.json"));

    report(3, "NPG contract", criterion3(lpg));
    report(4, "STL proficiency", criterion4());
    report(5, "faster training than STL", criterion5(lpg, stl, lpg_secs + stl_secs));
    report(6, "update never hinders", criterion6(lpg));
    report(7, "no forgetting versus EWC", criterion7(lpg, ewc));
    report(8, "theory diagnostics", criterion8(lpg));
    report(9, "determinism", criterion9(lpg, stl));
    report(10, "PG-ELLA fidelity", criterion10(ella, stl));
  } catch (const std::exception& e) {
    std::printf("FAIL acceptance aborted: %s\n", e.what());
    return 1;
  }
  return failed == 0 ? 0 : 1;
}
