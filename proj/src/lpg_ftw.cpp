#include "lpgftw/lpg_ftw.hpp"

#include <cmath>

#include <json.hpp>

#include "lpgftw/serialization.hpp"

namespace lpgftw {

namespace {

double sign0(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

Vector sign0(const Vector& v) { return v.unaryExpr([](double x) { return sign0(x); }); }

Eigen::Map<const Vector> vec(const Matrix& m) { return {m.data(), m.size()}; }

}  // namespace

KnowledgeBase KnowledgeBase::empty(int d, int k, double lambda, double mu) {
  require(d >= 1 && k >= 1, "knowledge base needs d >= 1 and k >= 1");
  require(lambda > 0.0 && mu >= 0.0, "need lambda > 0 and mu >= 0");
  KnowledgeBase kb;
  kb.d = d;
  kb.k = k;
  kb.lambda_reg = lambda;
  kb.mu_reg = mu;
  kb.L = Matrix::Zero(d, 0);
  kb.A_acc = Matrix::Zero(0, 0);
  kb.b_acc = Vector::Zero(0);
  return kb;
}

void KnowledgeBase::append_column(const Vector& column) {
  require(column.size() == d, "new column has wrong length");
  require(columns() < k, "dictionary already has k columns");
  const Eigen::Index old = A_acc.rows();
  L.conservativeResize(Eigen::NoChange, L.cols() + 1);
  L.col(L.cols() - 1) = column;
  Matrix A = Matrix::Zero(old + d, old + d);
  A.topLeftCorner(old, old) = A_acc;
  A_acc = std::move(A);
  Vector b = Vector::Zero(old + d);
  b.head(old) = b_acc;
  b_acc = std::move(b);
}

void KnowledgeBase::validate() const {
  require(L.rows() == d, "dictionary row count differs from d");
  require(columns() <= k, "dictionary has more than k columns");
  require(A_acc.rows() == d * columns() && A_acc.cols() == d * columns(),
          "A_acc shape does not match dictionary");
  require(b_acc.size() == d * columns(), "b_acc shape does not match dictionary");
  require(phase == KbPhase::Initializing || columns() == k,
          "main phase requires exactly k dictionary columns");
}

std::string matrix_hash(const Matrix& m) {
  std::string bytes(reinterpret_cast<const char*>(m.data()),
                    static_cast<std::size_t>(m.size()) * sizeof(double));
  bytes += std::to_string(m.rows()) + "x" + std::to_string(m.cols());
  return content_hash(bytes);
}

void LpgConfig::validate() const {
  require(k >= 1, "k must be >= 1", ErrorKind::Config);
  require(lambda > 0.0, "lambda must be positive", ErrorKind::Config);
  require(mu >= 0.0, "mu must be nonnegative", ErrorKind::Config);
  require(update_every >= 0, "update_every must be nonnegative", ErrorKind::Config);
}

Vector init_task_coeffs(int k_current) {
  require(k_current >= 0, "k must be nonnegative");
  return Vector::Zero(k_current);
}

Vector pad_coeffs(const Vector& s, int n) {
  require(s.size() <= n, "coefficient vector longer than the dictionary");
  Vector out = Vector::Zero(n);
  out.head(s.size()) = s;
  return out;
}

CoeffStep s_npg_step(const Matrix& L, const Vector& s, const Vector& g_theta,
                     const Matrix& fisher_theta_raw, const NPGConfig& cfg, double mu) {
  require(L.cols() == s.size() && L.rows() == g_theta.size(), "s-step shape mismatch");
  CoeffStep out;
  out.s = s;
  if (s.size() == 0) {
    out.vanished = true;
    return out;
  }
  const Vector g_s = L.transpose() * g_theta - mu * sign0(s);
  const Matrix F_raw = L.transpose() * fisher_theta_raw * L;
  const Matrix F_s = add_damping(F_raw, cfg);
  const NpgStep st = npg_step(g_s, F_s, cfg.delta);
  out.eta = st.eta;
  out.vanished = st.vanished;
  if (!st.vanished) {
    out.s += st.step;
    out.constraint_error = std::abs(st.step.dot(F_s * st.step) - cfg.delta) / cfg.delta;
  }
  return out;
}

CoeffStep s_npg_step(const Matrix& L, const Vector& s, const PGBatch& batch,
                     const PolicyLayout& layout, double sigma, const NPGConfig& cfg,
                     double mu) {
  const PolicyParams p = compose_policy(L, s, std::nullopt, sigma, layout);
  return s_npg_step(L, s, pg_gradient(batch, p), fisher_raw(batch, p), cfg, mu);
}

GradHess grad_and_hess(const TaskInstance& task, const Matrix& L, const Vector& s,
                       double sigma, const NPGConfig& cfg, int traj_per_iter, Rng& rng) {
  const PolicyParams p = compose_policy(L, s, std::nullopt, sigma, task.policy_layout());
  return grad_and_hess_at(task, p, cfg, traj_per_iter, rng);
}

double hat_ell(const Matrix& L, const Vector& s, const Vector& alpha, const Matrix& H,
               const Vector& g, double mu) {
  require(L.cols() == s.size() && L.rows() == alpha.size() && H.rows() == alpha.size() &&
              g.size() == alpha.size(),
          "surrogate shape mismatch");
  const Vector diff = alpha - L * s;
  return -mu * s.lpNorm<1>() + diff.dot(H * diff) - g.dot(diff);
}

namespace {

void accumulate(KnowledgeBase& kb, const TaskRecord& rec, double sign) {
  const int c = kb.columns();
  const int d = kb.d;
  require(rec.H.rows() == d && rec.H.cols() == d && rec.g.size() == d && rec.alpha.size() == d,
          "record curvature shape mismatch");
  const Vector s = pad_coeffs(rec.s, c);
  Vector rhs = 2.0 * rec.H * rec.alpha;
  if (kb.linear_term) rhs -= rec.g;
  for (int i = 0; i < c; ++i) {
    if (s[i] == 0.0) continue;
    kb.b_acc.segment(i * d, d) += sign * s[i] * rhs;
    for (int j = 0; j < c; ++j) {
      if (s[j] == 0.0) continue;
      kb.A_acc.block(i * d, j * d, d, d) += (sign * 2.0 * s[i] * s[j]) * rec.H;
    }
  }
}

}  // namespace

void add_task_to_accumulators(KnowledgeBase& kb, TaskRecord& rec) {
  if (rec.incorporated)
    throw Error(ErrorKind::DoubleIncorporation,
                "task " + std::to_string(rec.task_id) + " is already incorporated");
  accumulate(kb, rec, +1.0);
  kb.T += 1;
  rec.incorporated = true;
}

void remove_task_from_accumulators(KnowledgeBase& kb, TaskRecord& rec) {
  if (!rec.incorporated)
    throw Error(ErrorKind::NotIncorporated,
                "task " + std::to_string(rec.task_id) + " is not incorporated");
  accumulate(kb, rec, -1.0);
  kb.T -= 1;
  rec.incorporated = false;
}

Matrix solve_L(const KnowledgeBase& kb) {
  require(kb.T >= 1, "solve_L needs at least one incorporated task");
  const int n = kb.d * kb.columns();
  if (n == 0) return Matrix::Zero(kb.d, 0);
  const double inv_t = 1.0 / static_cast<double>(kb.T);
  Matrix system = inv_t * kb.A_acc;
  system = 0.5 * (system + system.transpose());
  system.diagonal().array() -= 2.0 * kb.lambda_reg;
  const Vector rhs = inv_t * kb.b_acc;

  auto residual_ok = [&](const Vector& x) {
    if (!x.allFinite()) return false;
    const double scale = system.cwiseAbs().maxCoeff() * x.cwiseAbs().maxCoeff() +
                         rhs.cwiseAbs().maxCoeff() + 1e-300;
    return (system * x - rhs).cwiseAbs().maxCoeff() <= 1e-9 * scale;
  };

  Eigen::LDLT<Matrix> ldlt(system);
  Vector x;
  double rcond = 0.0;
  if (ldlt.info() == Eigen::Success) {
    x = ldlt.solve(rhs);
    x += ldlt.solve(rhs - system * x);
    rcond = ldlt.rcond();
  }
  if (ldlt.info() != Eigen::Success || !residual_ok(x)) {
    // REINFORCE Hessians can make the system indefinite; least squares keeps it runnable.
    Eigen::CompleteOrthogonalDecomposition<Matrix> cod(system);
    x = cod.solve(rhs);
    x += cod.solve(rhs - system * x);
    Eigen::JacobiSVD<Matrix> svd(system);
    const auto& sv = svd.singularValues();
    rcond = sv[sv.size() - 1] / sv[0];
    if (!x.allFinite() || cod.rank() < n)
      throw Error(ErrorKind::IllConditionedConsolidation,
                  "ill-conditioned consolidation (reciprocal condition estimate " +
                      std::to_string(rcond) + ")");
  }
  return Eigen::Map<const Matrix>(x.data(), kb.d, kb.columns());
}

namespace {

double accumulator_residual(const KnowledgeBase& kb) {
  const double inv_t = 1.0 / static_cast<double>(kb.T);
  const Vector v = vec(kb.L);
  return (inv_t * (kb.A_acc * v) - 2.0 * kb.lambda_reg * v - inv_t * kb.b_acc).norm();
}

}  // namespace

TaskOutcome train_task(KnowledgeBase& kb, const TaskInstance& task,
                       std::optional<TaskRecord> previous, const NPGConfig& cfg,
                       const LpgConfig& lcfg, double sigma, int n_iters, int traj_per_iter,
                       Rng& rng) {
  require(kb.phase == KbPhase::Main, "train_task requires a fully initialized knowledge base");
  require(n_iters >= 1, "train_task needs N >= 1");
  const int M = lcfg.update_every == 0 ? n_iters : lcfg.update_every;
  require(M >= 1 && M <= n_iters, "update interval M must satisfy 1 <= M <= N");
  const PolicyLayout layout = task.policy_layout();
  require(layout.d() == kb.d, "task policy dimension differs from the knowledge base");

  KnowledgeBase base = kb;
  Vector s;
  if (previous) {
    require(previous->task_id == task.task_id, "revisit record belongs to another task");
    remove_task_from_accumulators(base, *previous);
    s = pad_coeffs(previous->s_current.size() ? previous->s_current : previous->s,
                   base.columns());
  } else {
    s = init_task_coeffs(base.columns());
  }

  TaskOutcome out;
  out.record.task_id = task.task_id;
  out.start_policy = compose_policy(base.L, s, std::nullopt, sigma, layout);
  out.curve.reserve(n_iters);

  KnowledgeBase tentative = base;
  Matrix L = base.L;
  Matrix L_before_last;

  for (int i = 1; i <= n_iters; ++i) {
    const PolicyParams p = compose_policy(L, s, std::nullopt, sigma, layout);
    PGBatch batch = collect_batch(task, p, traj_per_iter, rng);
    out.env_steps += static_cast<long>(batch.num_steps());
    out.curve.push_back(batch.mean_return(cfg.gamma));
    compute_advantages(batch, cfg);
    const CoeffStep st =
        s_npg_step(L, s, pg_gradient(batch, p), fisher_raw(batch, p), cfg, lcfg.mu);
    out.max_constraint_error = std::max(out.max_constraint_error, st.constraint_error);
    s = st.s;

    if (i % M == 0) {
      TaskRecord rec;
      rec.task_id = task.task_id;
      rec.s = s;
      rec.alpha = L * s;
      rec.L_snapshot_hash = matrix_hash(L);
      GradHess gh = grad_and_hess(task, L, s, sigma, cfg, traj_per_iter, rng);
      out.env_steps += gh.env_steps;
      rec.g = std::move(gh.g);
      rec.H = std::move(gh.H);

      tentative = base;
      tentative.L = L;
      add_task_to_accumulators(tentative, rec);
      L_before_last = L;
      out.expansion_L = L;
      L = solve_L(tentative);
      tentative.L = L;
      out.solve_residuals.push_back(accumulator_residual(tentative));
      out.record = std::move(rec);
      ++out.consolidations;
    }
  }
  out.record.s_current = s;
  out.tune_policy = compose_policy(
      (n_iters % M == 0) ? L_before_last : L, s, std::nullopt, sigma, layout);
  out.update_policy = compose_policy(L, s, std::nullopt, sigma, layout);
  kb = std::move(tentative);
  return out;
}

TaskOutcome initialize_task(KnowledgeBase& kb, const TaskInstance& task,
                            const NPGConfig& cfg, double sigma, int n_iters,
                            int traj_per_iter, Rng& rng) {
  require(kb.phase == KbPhase::Initializing, "knowledge base is already initialized");
  require(kb.columns() < kb.k, "initialization already has k tasks");
  require(n_iters >= 0, "n_iters must be nonnegative");
  const PolicyLayout layout = task.policy_layout();
  require(layout.d() == kb.d, "task policy dimension differs from the knowledge base");

  const int c = kb.columns();
  const int d = kb.d;
  Vector s = init_task_coeffs(c);
  Vector eps = Vector::Zero(d);

  Matrix jac(d, c + d);
  jac.leftCols(c) = kb.L;
  jac.rightCols(d) = Matrix::Identity(d, d);

  TaskOutcome out;
  out.record.task_id = task.task_id;
  out.start_policy = compose_policy(kb.L, s, eps, sigma, layout);
  out.curve.reserve(n_iters);

  for (int i = 0; i < n_iters; ++i) {
    const PolicyParams p = compose_policy(kb.L, s, eps, sigma, layout);
    PGBatch batch = collect_batch(task, p, traj_per_iter, rng);
    out.env_steps += static_cast<long>(batch.num_steps());
    out.curve.push_back(batch.mean_return(cfg.gamma));
    compute_advantages(batch, cfg);
    const Vector g_theta = pg_gradient(batch, p);
    Vector g(c + d);
    g.head(c) = kb.L.transpose() * g_theta - kb.mu_reg * sign0(s);
    g.tail(d) = g_theta - 2.0 * kb.lambda_reg * eps;
    const Matrix F = add_damping(jac.transpose() * fisher_raw(batch, p) * jac, cfg);
    const NpgStep st = npg_step(g, F, cfg.delta);
    if (!st.vanished) {
      out.max_constraint_error = std::max(
          out.max_constraint_error, std::abs(st.step.dot(F * st.step) - cfg.delta) / cfg.delta);
      s += st.step.head(c);
      eps += st.step.tail(d);
    }
  }

  out.tune_policy = compose_policy(kb.L, s, eps, sigma, layout);
  kb.append_column(eps);
  Vector s_ext(c + 1);
  s_ext.head(c) = s;
  s_ext[c] = 1.0;

  TaskRecord rec;
  rec.task_id = task.task_id;
  rec.s = s_ext;
  rec.s_current = s_ext;
  rec.alpha = kb.L * s_ext;
  rec.L_snapshot_hash = matrix_hash(kb.L);
  out.expansion_L = kb.L;
  GradHess gh = grad_and_hess(task, kb.L, s_ext, sigma, cfg, traj_per_iter, rng);
  out.env_steps += gh.env_steps;
  rec.g = std::move(gh.g);
  rec.H = std::move(gh.H);
  add_task_to_accumulators(kb, rec);
  if (kb.columns() == kb.k) kb.phase = KbPhase::Main;

  out.update_policy = compose_policy(kb.L, s_ext, std::nullopt, sigma, layout);
  out.record = std::move(rec);
  return out;
}

std::vector<TaskOutcome> initialize_kb(KnowledgeBase& kb, const std::vector<TaskInstance>& tasks,
                                       const NPGConfig& cfg, double sigma, int n_iters,
                                       int traj_per_iter, Rng& rng) {
  require(static_cast<int>(tasks.size()) + kb.columns() <= kb.k,
          "more tasks supplied than remaining initialization slots");
  std::vector<TaskOutcome> out;
  for (const auto& t : tasks)
    out.push_back(initialize_task(kb, t, cfg, sigma, n_iters, traj_per_iter, rng));
  return out;
}

// ---------------------------------------------------------------------------

LpgFtwLearner::LpgFtwLearner(PolicyLayout layout, double sigma, LpgConfig lcfg, NPGConfig npg,
                             int traj_per_iter)
    : layout_(layout),
      sigma_(sigma),
      lcfg_(lcfg),
      npg_(npg),
      traj_per_iter_(traj_per_iter),
      kb_(KnowledgeBase::empty(layout.d(), lcfg.k, lcfg.lambda, lcfg.mu)) {
  lcfg_.validate();
  npg_.validate();
  require(sigma > 0.0, "sigma must be positive");
  require(traj_per_iter >= 1, "traj_per_iter must be >= 1");
}

TaskOutcome LpgFtwLearner::learn_task(const TaskInstance& task, int n_iters, Rng& rng) {
  auto it = records_.find(task.task_id);
  if (kb_.phase == KbPhase::Initializing) {
    require(it == records_.end(),
            "revisiting a task before the knowledge base is initialized is not supported");
    TaskOutcome out = initialize_task(kb_, task, npg_, sigma_, n_iters, traj_per_iter_, rng);
    records_[task.task_id] = out.record;
    return out;
  }
  std::optional<TaskRecord> previous;
  if (it != records_.end()) previous = it->second;
  TaskOutcome out =
      train_task(kb_, task, previous, npg_, lcfg_, sigma_, n_iters, traj_per_iter_, rng);
  records_[task.task_id] = out.record;
  return out;
}

PolicyParams LpgFtwLearner::policy_for(int task_id) const {
  auto it = records_.find(task_id);
  require(it != records_.end(), "unknown task id " + std::to_string(task_id));
  const Vector& s = it->second.s_current.size() ? it->second.s_current : it->second.s;
  return compose_policy(kb_.L, pad_coeffs(s, kb_.columns()), std::nullopt, sigma_, layout_);
}

// ---------------------------------------------------------------------------
// JSON

nlohmann::json to_json(const KnowledgeBase& kb) {
  return {{"L", matrix_to_blob(kb.L)},
          {"A_acc", matrix_to_blob(kb.A_acc)},
          {"b_acc", matrix_to_blob(kb.b_acc)},
          {"T", kb.T},
          {"k", kb.k},
          {"d", kb.d},
          {"lambda", kb.lambda_reg},
          {"mu", kb.mu_reg},
          {"phase", kb.phase == KbPhase::Main ? "main" : "initializing"},
          {"linear_term", kb.linear_term}};
}

KnowledgeBase kb_from_json(const nlohmann::json& j) {
  KnowledgeBase kb;
  kb.L = matrix_from_blob(j.at("L"));
  kb.A_acc = matrix_from_blob(j.at("A_acc"));
  kb.b_acc = matrix_from_blob(j.at("b_acc"));
  kb.T = j.at("T").get<int>();
  kb.k = j.at("k").get<int>();
  kb.d = j.at("d").get<int>();
  kb.lambda_reg = j.at("lambda").get<double>();
  kb.mu_reg = j.at("mu").get<double>();
  kb.phase = j.at("phase").get<std::string>() == "main" ? KbPhase::Main : KbPhase::Initializing;
  kb.linear_term = j.value("linear_term", true);
  kb.validate();
  return kb;
}

nlohmann::json to_json(const TaskRecord& rec, bool include_curvature) {
  nlohmann::json j = {{"task_id", rec.task_id},
                      {"s", vector_to_json(rec.s)},
                      {"s_current", vector_to_json(rec.s_current)},
                      {"alpha", vector_to_json(rec.alpha)},
                      {"incorporated", rec.incorporated},
                      {"L_snapshot_hash", rec.L_snapshot_hash}};
  if (include_curvature) {
    j["H"] = matrix_to_blob(rec.H);
    j["g"] = matrix_to_blob(rec.g);
  }
  return j;
}

TaskRecord record_from_json(const nlohmann::json& j) {
  TaskRecord rec;
  rec.task_id = j.at("task_id").get<int>();
  rec.s = vector_from_json(j.at("s"));
  rec.s_current = vector_from_json(j.at("s_current"));
  rec.alpha = vector_from_json(j.at("alpha"));
  rec.incorporated = j.at("incorporated").get<bool>();
  rec.L_snapshot_hash = j.value("L_snapshot_hash", "");
  if (j.contains("H")) rec.H = matrix_from_blob(j.at("H"));
  if (j.contains("g")) rec.g = matrix_from_blob(j.at("g"));
  return rec;
}

}  // namespace lpgftw
