#include "lpgftw/baselines.hpp"

#include <cmath>

#include <json.hpp>

#include "lpgftw/serialization.hpp"

namespace lpgftw {

std::string EwcVariant::tag() const {
  const char s = sigma == EwcSigma::Shared ? '1' : '2';
  const char f = form == EwcForm::Huszar ? '1' : (form == EwcForm::Scaled ? '2' : '3');
  return std::string{s, ',', f};
}

EwcVariant EwcVariant::from_tag(const std::string& tag) {
  require(tag.size() == 3 && tag[1] == ',' && (tag[0] == '1' || tag[0] == '2') &&
              tag[2] >= '1' && tag[2] <= '3',
          "EWC variant must be one of 1,1 1,2 1,3 2,1 2,2 2,3 (got '" + tag + "')",
          ErrorKind::Config);
  EwcVariant v;
  v.sigma = tag[0] == '1' ? EwcSigma::Shared : EwcSigma::Task;
  v.form = tag[2] == '1' ? EwcForm::Huszar : (tag[2] == '2' ? EwcForm::Scaled : EwcForm::Original);
  return v;
}

std::vector<EwcVariant> all_ewc_variants() {
  std::vector<EwcVariant> out;
  for (EwcSigma s : {EwcSigma::Shared, EwcSigma::Task})
    for (EwcForm f : {EwcForm::Huszar, EwcForm::Scaled, EwcForm::Original})
      out.push_back(EwcVariant{f, s});
  return out;
}

EwcState EwcState::fresh(EwcVariant v, double lambda_ewc, PolicyLayout layout, double sigma) {
  require(lambda_ewc >= 0.0, "lambda_ewc must be nonnegative", ErrorKind::Config);
  EwcState s;
  s.variant = v;
  s.lambda_ewc = lambda_ewc;
  s.initial_sigma = sigma;
  s.policy = PolicyParams::zeros(layout, sigma);
  return s;
}

EwcPenalty ewc_penalty_grad(const EwcState& state, const Vector& theta, int t) {
  const auto d = theta.size();
  EwcPenalty out;
  out.grad = Vector::Zero(d);
  out.curvature = Matrix::Zero(d, d);
  if (state.anchors.empty()) return out;
  if (state.variant.form == EwcForm::Huszar)
    require(state.anchors.size() == 1, "Huszar EWC keeps exactly one anchor");

  double scale = state.lambda_ewc;
  if (state.variant.form == EwcForm::Scaled) {
    if (t <= 1) return out;
    scale /= static_cast<double>(t - 1);
  }
  for (const auto& a : state.anchors) {
    require(a.alpha.size() == d && a.H.rows() == d, "EWC anchor shape mismatch");
    const Vector v = theta - a.alpha;
    const Vector Hv = a.H * v;
    out.penalty -= scale * v.dot(Hv);
    out.grad -= 2.0 * scale * Hv;
    out.curvature -= 2.0 * scale * a.H;
  }
  return out;
}

EwcOutcome ewc_train(const TaskInstance& task, EwcState& state, const NPGConfig& cfg,
                     int n_iters, int traj_per_iter, Rng& rng) {
  const int t = state.tasks_seen + 1;
  PolicyParams start = state.policy;
  if (state.variant.sigma == EwcSigma::Task) start.sigma = state.initial_sigma;

  const EwcState* snapshot = &state;
  ObjectiveAugmentation augment = [snapshot, t](const Vector& theta, Vector& g, Matrix& F) {
    const EwcPenalty pen = ewc_penalty_grad(*snapshot, theta, t);
    g -= pen.grad;
    F += pen.curvature;
  };

  EwcOutcome out;
  out.start_policy = start;
  out.train = npg_train(task, start, cfg, n_iters, traj_per_iter, rng, augment);

  const TrainResult& r = out.train;
  state.policy = r.policy;
  state.task_sigmas[task.task_id] = r.policy.sigma;
  if (state.variant.form == EwcForm::Huszar) {
    Matrix H = r.final_H;
    if (!state.anchors.empty()) H += state.anchors.front().H;
    state.anchors.assign(1, EwcAnchor{r.policy.theta, std::move(H)});
  } else {
    state.anchors.push_back(EwcAnchor{r.policy.theta, r.final_H});
  }
  state.tasks_seen = t;
  return out;
}

PolicyParams ewc_policy_for(const EwcState& state, int task_id) {
  PolicyParams p = state.policy;
  if (state.variant.sigma == EwcSigma::Task) {
    auto it = state.task_sigmas.find(task_id);
    require(it != state.task_sigmas.end(), "unknown task id " + std::to_string(task_id));
    p.sigma = it->second;
  }
  return p;
}

// ---------------------------------------------------------------------------

PgEllaState PgEllaState::fresh(PolicyLayout layout, double sigma, const LpgConfig& lcfg) {
  lcfg.validate();
  PgEllaState s;
  s.kb = KnowledgeBase::empty(layout.d(), lcfg.k, lcfg.lambda, lcfg.mu);
  s.kb.linear_term = false;
  s.sigma = sigma;
  s.layout = layout;
  return s;
}

namespace {

double soft_threshold(double x, double t) {
  if (x > t) return x - t;
  if (x < -t) return x + t;
  return 0.0;
}

/// Max violation of the l1 optimality conditions for min s'Qs - 2c's + mu|s|_1.
double kkt_violation(const Matrix& Q, const Vector& c, const Vector& s, double mu) {
  const Vector rho = -2.0 * (Q * s - c);
  double worst = 0.0;
  for (Eigen::Index j = 0; j < s.size(); ++j) {
    const double v = s[j] != 0.0 ? std::abs(rho[j] - mu * (s[j] > 0 ? 1.0 : -1.0))
                                 : std::max(0.0, std::abs(rho[j]) - mu);
    worst = std::max(worst, v);
  }
  return worst;
}

}  // namespace

Vector pg_ella_coefficients(const Matrix& L, const Vector& alpha, const Matrix& H, double mu,
                            double tol) {
  require(L.rows() == alpha.size() && H.rows() == alpha.size(), "sparse coding shape mismatch");
  const Eigen::Index k = L.cols();
  const Matrix negH = -H;
  const Matrix Q = L.transpose() * negH * L;
  const Vector c = L.transpose() * negH * alpha;
  for (Eigen::Index j = 0; j < k; ++j)
    require(Q(j, j) >= 0.0, "PG-ELLA coding needs negative semidefinite curvature",
            ErrorKind::IllConditionedConsolidation);

  Vector s = Vector::Zero(k);
  constexpr int kMaxSweeps = 100000;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    double max_change = 0.0, max_abs = 0.0;
    for (Eigen::Index j = 0; j < k; ++j) {
      if (Q(j, j) <= 0.0) {
        s[j] = 0.0;
        continue;
      }
      const double partial = c[j] - (Q.row(j).dot(s) - Q(j, j) * s[j]);
      const double next = soft_threshold(partial, 0.5 * mu) / Q(j, j);
      max_change = std::max(max_change, std::abs(next - s[j]));
      s[j] = next;
      max_abs = std::max(max_abs, std::abs(next));
    }
    if (max_change <= tol * (1.0 + max_abs) * 1e-4) break;
  }

  // Exact solve on the active set with the signs coordinate descent found.
  std::vector<Eigen::Index> active;
  for (Eigen::Index j = 0; j < k; ++j)
    if (s[j] != 0.0) active.push_back(j);
  if (!active.empty()) {
    const auto n = static_cast<Eigen::Index>(active.size());
    Matrix Qa(n, n);
    Vector rhs(n);
    for (Eigen::Index a = 0; a < n; ++a) {
      rhs[a] = c[active[a]] - 0.5 * mu * (s[active[a]] > 0 ? 1.0 : -1.0);
      for (Eigen::Index b = 0; b < n; ++b) Qa(a, b) = Q(active[a], active[b]);
    }
    const Vector exact = Qa.ldlt().solve(rhs);
    Vector polished = Vector::Zero(k);
    bool signs_ok = exact.allFinite();
    for (Eigen::Index a = 0; a < n && signs_ok; ++a) {
      if (exact[a] * s[active[a]] <= 0.0) signs_ok = false;
      polished[active[a]] = exact[a];
    }
    if (signs_ok && kkt_violation(Q, c, polished, mu) <= kkt_violation(Q, c, s, mu))
      s = polished;
  }
  return s;
}

PgEllaOutcome pg_ella_train(const TaskInstance& task, PgEllaState& state, const NPGConfig& cfg,
                            int n_iters, int traj_per_iter, Rng& rng) {
  require(task.policy_layout() == state.layout, "task layout differs from PG-ELLA state");
  require(!state.records.count(task.task_id), "PG-ELLA does not support task revisits");
  PgEllaOutcome out;
  out.stl = stl_train(task, PolicyParams::zeros(state.layout, state.sigma), cfg, n_iters,
                      traj_per_iter, rng);
  out.tune_policy = out.stl.policy;

  KnowledgeBase& kb = state.kb;
  TaskRecord rec;
  rec.task_id = task.task_id;
  rec.alpha = out.stl.policy.theta;
  rec.g = out.stl.final_g;
  rec.H = out.stl.final_H;

  if (kb.phase == KbPhase::Initializing) {
    kb.append_column(rec.alpha);
    rec.s = Vector::Unit(kb.columns(), kb.columns() - 1);
    rec.L_snapshot_hash = matrix_hash(kb.L);
    add_task_to_accumulators(kb, rec);
    if (kb.columns() == kb.k) kb.phase = KbPhase::Main;
  } else {
    rec.s = pg_ella_coefficients(kb.L, rec.alpha, rec.H, kb.mu_reg);
    rec.L_snapshot_hash = matrix_hash(kb.L);
    add_task_to_accumulators(kb, rec);
    kb.L = solve_L(kb);
  }
  rec.s_current = rec.s;
  out.update_policy = compose_policy(kb.L, rec.s, std::nullopt, state.sigma, state.layout);
  state.records[task.task_id] = rec;
  out.record = std::move(rec);
  return out;
}

PolicyParams pg_ella_policy_for(const PgEllaState& state, int task_id) {
  auto it = state.records.find(task_id);
  require(it != state.records.end(), "unknown task id " + std::to_string(task_id));
  return compose_policy(state.kb.L, pad_coeffs(it->second.s, state.kb.columns()), std::nullopt,
                        state.sigma, state.layout);
}

nlohmann::json to_json(const EwcState& s) {
  nlohmann::json anchors = nlohmann::json::array();
  for (const auto& a : s.anchors)
    anchors.push_back({{"alpha", vector_to_json(a.alpha)}, {"H", matrix_to_blob(a.H)}});
  nlohmann::json sigmas = nlohmann::json::object();
  for (const auto& [id, sg] : s.task_sigmas) sigmas[std::to_string(id)] = sg;
  return {{"variant", s.variant.tag()},
          {"lambda_ewc", s.lambda_ewc},
          {"tasks_seen", s.tasks_seen},
          {"initial_sigma", s.initial_sigma},
          {"theta", vector_to_json(s.policy.theta)},
          {"sigma", s.policy.sigma},
          {"task_sigmas", sigmas},
          {"anchors", anchors}};
}

EwcState ewc_state_from_json(const nlohmann::json& j, const PolicyLayout& layout) {
  EwcState s;
  s.variant = EwcVariant::from_tag(j.at("variant").get<std::string>());
  s.lambda_ewc = j.at("lambda_ewc").get<double>();
  s.tasks_seen = j.at("tasks_seen").get<int>();
  s.initial_sigma = j.at("initial_sigma").get<double>();
  s.policy = PolicyParams(layout, vector_from_json(j.at("theta")), j.at("sigma").get<double>());
  for (const auto& [id, sg] : j.at("task_sigmas").items()) s.task_sigmas[std::stoi(id)] = sg.get<double>();
  for (const auto& a : j.at("anchors"))
    s.anchors.push_back(EwcAnchor{vector_from_json(a.at("alpha")), matrix_from_blob(a.at("H"))});
  return s;
}

}  // namespace lpgftw
