#include "lpgftw/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <future>
#include <limits>
#include <map>
#include <sstream>

#include "lpgftw/diagnostics.hpp"
#include "lpgftw/evaluation.hpp"
#include "lpgftw/plot.hpp"
#include "lpgftw/serialization.hpp"

namespace lpgftw {

// ---------------------------------------------------------------------------
// Config

const char* to_string(Method m) {
  switch (m) {
    case Method::LpgFtw: return "lpg_ftw";
    case Method::Stl: return "stl";
    case Method::Ewc: return "ewc";
    case Method::PgElla: return "pg_ella";
  }
  return "?";
}

Method method_from_string(const std::string& s) {
  if (s == "lpg_ftw") return Method::LpgFtw;
  if (s == "stl") return Method::Stl;
  if (s == "ewc") return Method::Ewc;
  if (s == "pg_ella") return Method::PgElla;
  throw Error(ErrorKind::Config, "unknown method '" + s + "'");
}

void ExperimentConfig::validate() const {
  auto need = [](bool c, const std::string& what) { require(c, what, ErrorKind::Config); };
  need(!seeds.empty(), "seeds must be nonempty");
  need(T_max >= 1, "T_max must be >= 1");
  need(n_iters >= 1, "n_iters must be >= 1");
  need(traj_per_iter >= 1, "traj_per_iter must be >= 1");
  need(eval_rollouts >= 1, "eval_rollouts must be >= 1");
  need(method_params.k >= 1, "k must be >= 1");
  need(method_params.lambda > 0.0, "lambda must be positive");
  need(method_params.mu >= 0.0, "mu must be nonnegative");
  need(method_params.M >= 0 && method_params.M <= n_iters, "M must lie in [0, n_iters]");
  need(method_params.lambda_ewc >= 0.0, "lambda_ewc must be nonnegative");
  for (double l : method_params.lambda_ewc_grid)
    need(l >= 0.0, "lambda_ewc_grid entries must be nonnegative");
  if (factored()) need(T_max >= method_params.k, "T_max must be >= k for factored methods");
  EwcVariant::from_tag(method_params.variant);
  family.validate();
  try {
    npg.validate();
  } catch (const Error& e) {
    throw Error(ErrorKind::Config, e.what());
  }
}

nlohmann::json to_json(const NPGConfig& c) {
  return {{"delta", c.delta},
          {"gae_lambda", c.gae_lambda},
          {"gamma", c.gamma},
          {"fisher_damping", c.fisher_damping},
          {"fisher_damping_rel", c.fisher_damping_rel},
          {"normalize_advantages", c.normalize_advantages},
          {"hessian", to_string(c.hessian)},
          {"learn_sigma", c.learn_sigma},
          {"sigma_lr", c.sigma_lr}};
}

NPGConfig npg_config_from_json(const nlohmann::json& j) {
  reject_unknown_keys(j,
                      {"delta", "gae_lambda", "gamma", "fisher_damping", "fisher_damping_rel",
                       "normalize_advantages", "hessian", "learn_sigma", "sigma_lr"},
                      "npg");
  NPGConfig c;
  c.delta = j.value("delta", c.delta);
  c.gae_lambda = j.value("gae_lambda", c.gae_lambda);
  c.gamma = j.value("gamma", c.gamma);
  c.fisher_damping = j.value("fisher_damping", c.fisher_damping);
  c.fisher_damping_rel = j.value("fisher_damping_rel", c.fisher_damping_rel);
  c.normalize_advantages = j.value("normalize_advantages", c.normalize_advantages);
  if (j.contains("hessian")) c.hessian = hessian_kind_from_string(j.at("hessian").get<std::string>());
  c.learn_sigma = j.value("learn_sigma", c.learn_sigma);
  c.sigma_lr = j.value("sigma_lr", c.sigma_lr);
  return c;
}

nlohmann::json to_json(const ExperimentConfig& c) {
  const auto& mp = c.method_params;
  return {{"method", to_string(c.method)},
          {"method_params",
           {{"k", mp.k},
            {"lambda", mp.lambda},
            {"mu", mp.mu},
            {"M", mp.M},
            {"lambda_ewc", mp.lambda_ewc},
            {"lambda_ewc_grid", mp.lambda_ewc_grid},
            {"variant", mp.variant}}},
          {"family", to_json(c.family)},
          {"T_max", c.T_max},
          {"n_iters", c.n_iters},
          {"traj_per_iter", c.traj_per_iter},
          {"npg", to_json(c.npg)},
          {"seeds", c.seeds},
          {"eval_rollouts", c.eval_rollouts},
          {"output_dir", c.output_dir},
          {"keep_hessians", c.keep_hessians}};
}

ExperimentConfig config_from_json(const nlohmann::json& j) {
  require(j.is_object(), "config must be a JSON object", ErrorKind::Config);
  reject_unknown_keys(j,
                      {"method", "method_params", "family", "T_max", "n_iters", "traj_per_iter",
                       "npg", "seeds", "eval_rollouts", "output_dir", "keep_hessians"},
                      "config");
  ExperimentConfig c;
  try {
    c.method = method_from_string(j.at("method").get<std::string>());
    if (j.contains("method_params")) {
      const auto& m = j.at("method_params");
      reject_unknown_keys(m, {"k", "lambda", "mu", "M", "lambda_ewc", "lambda_ewc_grid", "variant"},
                          "method_params");
      auto& mp = c.method_params;
      mp.k = m.value("k", mp.k);
      mp.lambda = m.value("lambda", mp.lambda);
      mp.mu = m.value("mu", mp.mu);
      mp.M = m.value("M", mp.M);
      mp.lambda_ewc = m.value("lambda_ewc", mp.lambda_ewc);
      if (m.contains("lambda_ewc_grid"))
        mp.lambda_ewc_grid = m.at("lambda_ewc_grid").get<std::vector<double>>();
      mp.variant = m.value("variant", mp.variant);
    }
    c.family = family_from_json(j.at("family"));
    c.T_max = j.value("T_max", c.T_max);
    c.n_iters = j.value("n_iters", c.n_iters);
    c.traj_per_iter = j.value("traj_per_iter", c.traj_per_iter);
    if (j.contains("npg")) c.npg = npg_config_from_json(j.at("npg"));
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::int64_t>>();
    c.eval_rollouts = j.value("eval_rollouts", c.eval_rollouts);
    c.output_dir = j.value("output_dir", c.output_dir);
    c.keep_hessians = j.value("keep_hessians", c.keep_hessians);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Config, std::string("malformed config: ") + e.what());
  } catch (const Error& e) {
    throw Error(ErrorKind::Config, e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const Error& e) {
    throw Error(ErrorKind::Config, e.what());
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Config, path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

// ---------------------------------------------------------------------------
// Running

bool LifelongMetrics::all_ok() const {
  return std::all_of(seeds.begin(), seeds.end(), [](const SeedResult& s) { return s.ok; });
}

namespace {

// Stream tags mixed with the run seed.
constexpr std::uint64_t kTaskStream = 1;
constexpr std::uint64_t kTrainStream = 2;
constexpr std::uint64_t kEvalStream = 3;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

double inf_norm(const Vector& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

double trend_ratio_last(const StabilitySeries& s, int window) {
  if (static_cast<int>(s.scaled.size()) < window) return kNaN;
  return stability_trend_ratio(s, window);
}

bool settling(const std::vector<double>& successive) {
  // successive[0] compares against nothing meaningful; use entries 1..
  if (successive.size() < 10) return false;
  const double first = *std::max_element(successive.begin() + 1, successive.begin() + 6);
  return std::all_of(successive.end() - 5, successive.end(),
                     [&](double x) { return x <= first; });
}

struct Evaluator {
  const ExperimentConfig& cfg;
  std::int64_t seed;
  double operator()(const TaskInstance& task, const PolicyParams& p) const {
    Rng rng(eval_seed(seed, task.task_id));
    return evaluate_policy(task, p, cfg.eval_rollouts, cfg.npg.gamma, rng).mean;
  }
};

void push_curve(SeedResult& r, int task_index, const std::vector<double>& curve) {
  for (std::size_t i = 0; i < curve.size(); ++i)
    r.curves.push_back({r.seed, task_index, static_cast<int>(i), curve[i]});
}

nlohmann::json records_json(const std::vector<TaskRecord>& recs, bool keep_hessians) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& r : recs) a.push_back(to_json(r, keep_hessians));
  return a;
}

nlohmann::json history_json(const std::vector<Matrix>& hist) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& L : hist) a.push_back(matrix_to_blob(L));
  return a;
}

/// Training stream of the task at position t. Every method starts each task from
/// the same random state, so their curves are paired task by task.
Rng task_rng(std::uint64_t train_base, std::size_t t) {
  return Rng(mix_seed(train_base, static_cast<std::uint64_t>(t)));
}

void factored_diagnostics(SeedDiagnostics& d, const std::vector<Matrix>& L_hist, int k) {
  const StabilitySeries st = stability_series(L_hist, k);
  d.stability_scaled = st.scaled;
  d.stability_trend_ratio = trend_ratio_last(st, 10);
}

void run_lpg_ftw(const ExperimentConfig& cfg, SeedResult& r, std::uint64_t train_base,
                 const Evaluator& eval) {
  const auto& mp = cfg.method_params;
  const PolicyLayout layout = cfg.family.policy_layout();
  LpgConfig lc;
  lc.k = mp.k;
  lc.lambda = mp.lambda;
  lc.mu = mp.mu;
  lc.update_every = mp.M;
  LpgFtwLearner learner(layout, cfg.family.eval_sigma, lc, cfg.npg, cfg.traj_per_iter);
  std::vector<Matrix> L_hist;
  std::vector<TaskRecord> recs;
  auto& d = r.diagnostics;

  for (std::size_t t = 0; t < r.tasks.size(); ++t) {
    const TaskInstance& task = r.tasks[t];
    Rng rng = task_rng(train_base, t);
    const bool init_phase = learner.kb().phase == KbPhase::Initializing;
    auto t0 = Clock::now();
    TaskOutcome o = learner.learn_task(task, cfg.n_iters, rng);
    TaskRow row{r.seed, static_cast<int>(t), task.task_id};
    row.train_seconds = seconds_since(t0);
    row.env_steps_used = o.env_steps;
    t0 = Clock::now();
    row.start_return = eval(task, o.start_policy);
    row.tune_return = eval(task, o.tune_policy);
    row.update_return = eval(task, o.update_policy);
    row.eval_seconds = seconds_since(t0);
    r.rows.push_back(row);
    push_curve(r, static_cast<int>(t), o.curve);

    L_hist.push_back(learner.kb().L);
    recs.push_back(o.record);
    const TaskRecord& rec = o.record;
    d.max_constraint_error = std::max(d.max_constraint_error, o.max_constraint_error);
    d.max_hessian_eigenvalue = t == 0 ? max_sym_eigenvalue(rec.H)
                                      : std::max(d.max_hessian_eigenvalue, max_sym_eigenvalue(rec.H));
    d.assumption_d.push_back(check_assumption_d(o.expansion_L, rec.H, rec.s).value);
    if (!init_phase) {
      const OptimalityReport rep =
          check_lemma2(o.expansion_L, rec.s, rec.alpha, rec.H, rec.g, mp.mu);
      const double gi = inf_norm(rec.g);
      d.lemma2_relative.push_back(gi > 0.0 ? rep.max_violation / gi : rep.max_violation);
      const double fo = surrogate_gradient(learner.kb().L, recs, mp.lambda).norm();
      d.max_first_order = std::max(d.max_first_order, fo);
      for (double res : o.solve_residuals) d.max_first_order = std::max(d.max_first_order, res);
    }
  }
  for (auto& row : r.rows)
    row.final_return = eval(r.tasks[row.task_index], learner.policy_for(row.task_id));

  factored_diagnostics(d, L_hist, mp.k);
  const SurrogateSeries ss = surrogate_series(L_hist, recs, mp.lambda, mp.mu);
  d.surrogate_values = ss.values;
  d.surrogate_successive = ss.successive;
  d.surrogate_settling = settling(ss.successive);

  nlohmann::json final_records = nlohmann::json::array();
  for (const auto& [id, rec] : learner.records()) final_records.push_back(to_json(rec, cfg.keep_hessians));
  r.checkpoint = {{"kb", to_json(learner.kb())},
                  {"records", final_records},
                  {"records_in_order", records_json(recs, cfg.keep_hessians)},
                  {"L_history", history_json(L_hist)}};
}

void run_pg_ella(const ExperimentConfig& cfg, SeedResult& r, std::uint64_t train_base,
                 const Evaluator& eval) {
  const auto& mp = cfg.method_params;
  const PolicyLayout layout = cfg.family.policy_layout();
  LpgConfig lc;
  lc.k = mp.k;
  lc.lambda = mp.lambda;
  lc.mu = mp.mu;
  PgEllaState state = PgEllaState::fresh(layout, cfg.family.eval_sigma, lc);
  std::vector<Matrix> L_hist;
  std::vector<TaskRecord> recs;
  auto& d = r.diagnostics;

  for (std::size_t t = 0; t < r.tasks.size(); ++t) {
    const TaskInstance& task = r.tasks[t];
    Rng rng = task_rng(train_base, t);
    auto t0 = Clock::now();
    PgEllaOutcome o = pg_ella_train(task, state, cfg.npg, cfg.n_iters, cfg.traj_per_iter, rng);
    TaskRow row{r.seed, static_cast<int>(t), task.task_id};
    row.train_seconds = seconds_since(t0);
    row.env_steps_used = o.stl.env_steps;
    t0 = Clock::now();
    row.start_return = eval(task, PolicyParams::zeros(layout, state.sigma));
    row.tune_return = eval(task, o.tune_policy);
    row.update_return = eval(task, o.update_policy);
    row.eval_seconds = seconds_since(t0);
    r.rows.push_back(row);
    push_curve(r, static_cast<int>(t), o.stl.curve);

    L_hist.push_back(state.kb.L);
    recs.push_back(o.record);
    d.max_constraint_error = std::max(d.max_constraint_error, o.stl.max_constraint_error);
    d.max_hessian_eigenvalue = t == 0 ? max_sym_eigenvalue(o.record.H)
                                      : std::max(d.max_hessian_eigenvalue,
                                                 max_sym_eigenvalue(o.record.H));
    if (state.kb.phase == KbPhase::Main && state.kb.T > mp.k) {
      const KnowledgeBase& kb = state.kb;
      const Eigen::Map<const Vector> v(kb.L.data(), kb.L.size());
      const double inv_t = 1.0 / kb.T;
      const double fo = (inv_t * (kb.A_acc * v) - 2.0 * kb.lambda_reg * v - inv_t * kb.b_acc).norm();
      d.max_first_order = std::max(d.max_first_order, fo);
    }
  }
  for (auto& row : r.rows)
    row.final_return = eval(r.tasks[row.task_index], pg_ella_policy_for(state, row.task_id));

  factored_diagnostics(d, L_hist, mp.k);
  r.checkpoint = {{"kb", to_json(state.kb)},
                  {"records", records_json(recs, cfg.keep_hessians)},
                  {"records_in_order", records_json(recs, cfg.keep_hessians)},
                  {"L_history", history_json(L_hist)}};
}

void run_stl(const ExperimentConfig& cfg, SeedResult& r, std::uint64_t train_base,
             const Evaluator& eval) {
  const PolicyLayout layout = cfg.family.policy_layout();
  std::vector<PolicyParams> policies;
  auto& d = r.diagnostics;
  for (std::size_t t = 0; t < r.tasks.size(); ++t) {
    const TaskInstance& task = r.tasks[t];
    Rng rng = task_rng(train_base, t);
    const PolicyParams p0 = PolicyParams::zeros(layout, cfg.family.eval_sigma);
    auto t0 = Clock::now();
    TrainResult tr = npg_train(task, p0, cfg.npg, cfg.n_iters, cfg.traj_per_iter, rng, {}, false);
    TaskRow row{r.seed, static_cast<int>(t), task.task_id};
    row.train_seconds = seconds_since(t0);
    row.env_steps_used = tr.env_steps;
    t0 = Clock::now();
    row.start_return = eval(task, p0);
    row.tune_return = eval(task, tr.policy);
    row.update_return = row.tune_return;
    row.eval_seconds = seconds_since(t0);
    r.rows.push_back(row);
    push_curve(r, static_cast<int>(t), tr.curve);
    d.max_constraint_error = std::max(d.max_constraint_error, tr.max_constraint_error);
    policies.push_back(tr.policy);
  }
  nlohmann::json pol = nlohmann::json::array();
  for (std::size_t t = 0; t < r.rows.size(); ++t) {
    auto& row = r.rows[t];
    row.final_return = eval(r.tasks[t], policies[t]);
    pol.push_back({{"task_id", row.task_id},
                   {"theta", vector_to_json(policies[t].theta)},
                   {"sigma", policies[t].sigma}});
  }
  r.checkpoint = {{"policies", pol}};
}

void run_ewc(const ExperimentConfig& cfg, SeedResult& r, std::uint64_t train_base,
             const Evaluator& eval) {
  const PolicyLayout layout = cfg.family.policy_layout();
  EwcState state = EwcState::fresh(EwcVariant::from_tag(cfg.method_params.variant),
                                   cfg.method_params.lambda_ewc, layout, cfg.family.eval_sigma);
  r.lambda_ewc = cfg.method_params.lambda_ewc;
  auto& d = r.diagnostics;
  for (std::size_t t = 0; t < r.tasks.size(); ++t) {
    const TaskInstance& task = r.tasks[t];
    Rng rng = task_rng(train_base, t);
    auto t0 = Clock::now();
    EwcOutcome o = ewc_train(task, state, cfg.npg, cfg.n_iters, cfg.traj_per_iter, rng);
    TaskRow row{r.seed, static_cast<int>(t), task.task_id};
    row.train_seconds = seconds_since(t0);
    row.env_steps_used = o.train.env_steps;
    t0 = Clock::now();
    row.start_return = eval(task, o.start_policy);
    row.tune_return = eval(task, ewc_policy_for(state, task.task_id));
    row.update_return = row.tune_return;
    row.eval_seconds = seconds_since(t0);
    r.rows.push_back(row);
    push_curve(r, static_cast<int>(t), o.train.curve);
    d.max_constraint_error = std::max(d.max_constraint_error, o.train.max_constraint_error);
    d.max_hessian_eigenvalue = t == 0 ? max_sym_eigenvalue(o.train.final_H)
                                      : std::max(d.max_hessian_eigenvalue,
                                                 max_sym_eigenvalue(o.train.final_H));
  }
  for (auto& row : r.rows)
    row.final_return = eval(r.tasks[row.task_index], ewc_policy_for(state, row.task_id));
  r.checkpoint = {{"ewc", to_json(state)}};
}

}  // namespace

std::vector<TaskInstance> draw_tasks(const ExperimentConfig& cfg, std::int64_t seed) {
  auto family = std::make_shared<const TaskFamilySpec>(cfg.family);
  Rng rng(mix_seed(static_cast<std::uint64_t>(seed), kTaskStream));
  std::vector<TaskInstance> tasks;
  tasks.reserve(cfg.T_max);
  for (int t = 0; t < cfg.T_max; ++t) tasks.push_back(sample_task(family, rng, t));
  // Fisher-Yates with a plain modulus so the order does not depend on the
  // standard library's distribution implementation.
  for (std::size_t i = tasks.size(); i > 1; --i) {
    const std::size_t j = rng() % i;
    std::swap(tasks[i - 1], tasks[j]);
  }
  return tasks;
}

std::uint64_t eval_seed(std::int64_t seed, int task_id) {
  return mix_seed(mix_seed(static_cast<std::uint64_t>(seed), kEvalStream),
                  static_cast<std::uint64_t>(task_id));
}

SeedResult run_seed(const ExperimentConfig& cfg, std::int64_t seed) {
  SeedResult r;
  r.seed = seed;
  try {
    cfg.validate();
    r.tasks = draw_tasks(cfg, seed);
    const std::uint64_t train_base = mix_seed(static_cast<std::uint64_t>(seed), kTrainStream);
    const Evaluator eval{cfg, seed};
    switch (cfg.method) {
      case Method::LpgFtw: run_lpg_ftw(cfg, r, train_base, eval); break;
      case Method::PgElla: run_pg_ella(cfg, r, train_base, eval); break;
      case Method::Stl: run_stl(cfg, r, train_base, eval); break;
      case Method::Ewc: run_ewc(cfg, r, train_base, eval); break;
    }
  } catch (const std::exception& e) {
    r.ok = false;
    r.error = e.what();
    r.rows.clear();
    r.curves.clear();
    r.checkpoint = nlohmann::json::object();
    TaskRow fail{seed, -1, -1, kNaN, kNaN, kNaN, kNaN, 0};
    r.rows.push_back(fail);
  }
  return r;
}

namespace {

std::vector<SeedResult> run_all_seeds(const ExperimentConfig& cfg, bool parallel) {
  std::vector<SeedResult> out;
  if (!parallel || cfg.seeds.size() < 2) {
    for (auto s : cfg.seeds) out.push_back(run_seed(cfg, s));
    return out;
  }
  std::vector<std::future<SeedResult>> futs;
  for (auto s : cfg.seeds)
    futs.push_back(std::async(std::launch::async, [&cfg, s] { return run_seed(cfg, s); }));
  for (auto& f : futs) out.push_back(f.get());
  return out;
}

double mean_final(const std::vector<SeedResult>& seeds) {
  double sum = 0.0;
  int n = 0;
  for (const auto& s : seeds) {
    if (!s.ok) continue;
    for (const auto& row : s.rows) {
      sum += row.final_return;
      ++n;
    }
  }
  return n ? sum / n : -std::numeric_limits<double>::infinity();
}

}  // namespace

LifelongMetrics run_lifelong(const ExperimentConfig& cfg, bool parallel) {
  cfg.validate();
  LifelongMetrics m;
  m.config = cfg;
  if (cfg.method == Method::Ewc && !cfg.method_params.lambda_ewc_grid.empty()) {
    double best = -std::numeric_limits<double>::infinity();
    bool have = false;
    for (double lam : cfg.method_params.lambda_ewc_grid) {
      ExperimentConfig c = cfg;
      c.method_params.lambda_ewc = lam;
      std::vector<SeedResult> seeds = run_all_seeds(c, parallel);
      const double score = mean_final(seeds);
      m.ewc_grid_scores.emplace_back(lam, score);
      if (!have || score > best) {
        best = score;
        have = true;
        m.seeds = std::move(seeds);
        m.selected_lambda_ewc = lam;
      }
    }
  } else {
    m.seeds = run_all_seeds(cfg, parallel);
    m.selected_lambda_ewc = cfg.method_params.lambda_ewc;
  }
  return m;
}

// ---------------------------------------------------------------------------
// Output

namespace {

std::string fmt(double x) {
  if (std::isnan(x)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

constexpr const char* kMetricsHeader =
    "seed,task_index,task_id,start_return,tune_return,update_return,final_return,env_steps_used";
constexpr const char* kCurvesHeader = "seed,task_index,iteration,mean_return";

struct Stat {
  double mean = 0.0;
  double std_error = 0.0;
  int n = 0;
};

Stat stat(const std::vector<double>& v) {
  Stat s;
  s.n = static_cast<int>(v.size());
  if (v.empty()) return s;
  for (double x : v) s.mean += x;
  s.mean /= s.n;
  if (s.n > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.std_error = std::sqrt(ss / (s.n - 1)) / std::sqrt(static_cast<double>(s.n));
  }
  return s;
}

nlohmann::json stat_json(const std::vector<double>& v) {
  const Stat s = stat(v);
  return {{"mean", s.mean}, {"std_error", s.std_error}, {"n", s.n}};
}

nlohmann::json num_or_null(double x) { return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(); }

nlohmann::json diagnostics_seed_json(const SeedResult& s) {
  const auto& d = s.diagnostics;
  nlohmann::json j = {{"seed", s.seed},
                      {"max_constraint_error", d.max_constraint_error},
                      {"max_hessian_eigenvalue", num_or_null(d.max_hessian_eigenvalue)}};
  if (!d.stability_scaled.empty()) {
    j["stability_scaled"] = d.stability_scaled;
    j["stability_trend_ratio"] = num_or_null(d.stability_trend_ratio);
    j["max_first_order"] = d.max_first_order;
  }
  if (!d.surrogate_values.empty()) {
    j["surrogate_values"] = d.surrogate_values;
    j["surrogate_successive"] = d.surrogate_successive;
    j["surrogate_settling"] = d.surrogate_settling;
  }
  if (!d.lemma2_relative.empty()) {
    j["lemma2_relative_violation"] = d.lemma2_relative;
    j["max_lemma2_relative_violation"] =
        *std::max_element(d.lemma2_relative.begin(), d.lemma2_relative.end());
  }
  if (!d.assumption_d.empty()) {
    j["assumption_d"] = d.assumption_d;
    j["max_assumption_d"] = *std::max_element(d.assumption_d.begin(), d.assumption_d.end());
  }
  return j;
}

}  // namespace

std::string metrics_csv(const LifelongMetrics& m) {
  std::ostringstream os;
  os << kMetricsHeader << '\n';
  for (const auto& s : m.seeds)
    for (const auto& r : s.rows)
      os << r.seed << ',' << r.task_index << ',' << r.task_id << ',' << fmt(r.start_return) << ','
         << fmt(r.tune_return) << ',' << fmt(r.update_return) << ',' << fmt(r.final_return) << ','
         << r.env_steps_used << '\n';
  return os.str();
}

std::string curves_csv(const LifelongMetrics& m) {
  std::ostringstream os;
  os << kCurvesHeader << '\n';
  for (const auto& s : m.seeds)
    for (const auto& c : s.curves)
      os << c.seed << ',' << c.task_index << ',' << c.iteration << ',' << fmt(c.mean_return)
         << '\n';
  return os.str();
}

nlohmann::json summary_json(const LifelongMetrics& m) {
  const auto& cfg = m.config;
  const int first = cfg.method_params.k;
  std::vector<double> start, tune, update, fin, auc, upd_rel, fin_rel, steps;
  nlohmann::json per_seed = nlohmann::json::array();
  nlohmann::json failures = nlohmann::json::array();
  nlohmann::json wall = nlohmann::json::array();
  for (const auto& s : m.seeds) {
    if (!s.ok) {
      failures.push_back({{"seed", s.seed}, {"error", s.error}});
      continue;
    }
    double a = 0, b = 0, c = 0, d = 0, du = 0, dfin = 0, at = 0, au = 0, st = 0;
    double train_s = 0, eval_s = 0;
    for (const auto& r : s.rows) {
      a += r.start_return;
      b += r.tune_return;
      c += r.update_return;
      d += r.final_return;
      du += r.update_return - r.tune_return;
      dfin += r.final_return - r.update_return;
      at += std::abs(r.tune_return);
      au += std::abs(r.update_return);
      st += static_cast<double>(r.env_steps_used);
      train_s += r.train_seconds;
      eval_s += r.eval_seconds;
    }
    const double n = static_cast<double>(s.rows.size());
    std::map<int, std::pair<double, int>> task_auc;
    for (const auto& cr : s.curves)
      if (cr.task_index >= first) {
        task_auc[cr.task_index].first += cr.mean_return;
        ++task_auc[cr.task_index].second;
      }
    double auc_sum = 0.0;
    for (const auto& [ti, v] : task_auc) auc_sum += v.first / v.second;
    const double seed_auc = task_auc.empty() ? kNaN : auc_sum / task_auc.size();

    start.push_back(a / n);
    tune.push_back(b / n);
    update.push_back(c / n);
    fin.push_back(d / n);
    upd_rel.push_back(at > 0 ? du / at : 0.0);
    fin_rel.push_back(au > 0 ? dfin / au : 0.0);
    steps.push_back(st / n);
    if (std::isfinite(seed_auc)) auc.push_back(seed_auc);
    per_seed.push_back({{"seed", s.seed},
                        {"start_return", a / n},
                        {"tune_return", b / n},
                        {"update_return", c / n},
                        {"final_return", d / n},
                        {"auc_after_init", num_or_null(seed_auc)},
                        {"update_minus_tune_relative", upd_rel.back()},
                        {"final_minus_update_relative", fin_rel.back()},
                        {"env_steps_per_task", st / n}});
    wall.push_back({{"seed", s.seed}, {"train_seconds", train_s}, {"eval_seconds", eval_s}});
  }

  nlohmann::json diag = nlohmann::json::array();
  int stab_ok = 0, settle_ok = 0, stab_n = 0;
  double max_fo = 0.0, max_l2 = 0.0, max_ad = -std::numeric_limits<double>::infinity();
  double max_ce = 0.0, max_he = -std::numeric_limits<double>::infinity();
  for (const auto& s : m.seeds) {
    if (!s.ok) continue;
    const auto& d = s.diagnostics;
    diag.push_back(diagnostics_seed_json(s));
    if (!d.stability_scaled.empty()) {
      ++stab_n;
      if (d.stability_trend_ratio <= 3.0) ++stab_ok;
      if (d.surrogate_settling) ++settle_ok;
    }
    max_fo = std::max(max_fo, d.max_first_order);
    for (double v : d.lemma2_relative) max_l2 = std::max(max_l2, v);
    for (double v : d.assumption_d) max_ad = std::max(max_ad, v);
    max_ce = std::max(max_ce, d.max_constraint_error);
    max_he = std::max(max_he, d.max_hessian_eigenvalue);
  }

  nlohmann::json trends = {{"max_constraint_error", max_ce},
                           {"max_hessian_eigenvalue", num_or_null(max_he)}};
  if (cfg.factored()) {
    trends["stability_trend_ok_seeds"] = stab_ok;
    trends["stability_seeds"] = stab_n;
    trends["max_first_order"] = max_fo;
  }
  if (cfg.method == Method::LpgFtw) {
    trends["surrogate_settling_seeds"] = settle_ok;
    trends["max_lemma2_relative_violation"] = max_l2;
    trends["max_assumption_d"] = num_or_null(max_ad);
  }

  const nlohmann::json cfg_json = to_json(cfg);
  nlohmann::json j = {
      {"method", to_string(cfg.method)},
      {"config_hash", content_hash(cfg_json.dump())},
      {"config", cfg_json},
      {"seeds_completed", static_cast<int>(per_seed.size())},
      {"failures", failures},
      {"aggregates",
       {{"start_return", stat_json(start)},
        {"tune_return", stat_json(tune)},
        {"update_return", stat_json(update)},
        {"final_return", stat_json(fin)},
        {"auc_after_init", stat_json(auc)},
        {"update_minus_tune_relative", stat_json(upd_rel)},
        {"final_minus_update_relative", stat_json(fin_rel)},
        {"env_steps_per_task", stat_json(steps)}}},
      {"per_seed", per_seed},
      {"diagnostics", trends},
      {"wall_clock", wall},
  };
  if (cfg.method == Method::Ewc) {
    j["lambda_ewc_selected"] = m.selected_lambda_ewc;
    nlohmann::json grid = nlohmann::json::array();
    for (const auto& [lam, score] : m.ewc_grid_scores)
      grid.push_back({{"lambda_ewc", lam}, {"mean_final_return", num_or_null(score)}});
    j["lambda_ewc_grid"] = grid;
  }
  return j;
}

nlohmann::json checkpoint_json(const LifelongMetrics& m) {
  const auto& cfg = m.config;
  nlohmann::json seeds = nlohmann::json::array();
  for (const auto& s : m.seeds) {
    nlohmann::json js = s.checkpoint.is_object() ? s.checkpoint : nlohmann::json::object();
    js["seed"] = s.seed;
    js["ok"] = s.ok;
    seeds.push_back(js);
  }
  return {{"format", "lpgftw-checkpoint"},
          {"version", 1},
          {"method", to_string(cfg.method)},
          {"family", to_json(cfg.family)},
          {"sigma", cfg.family.eval_sigma},
          {"gamma", cfg.npg.gamma},
          {"eval_rollouts", cfg.eval_rollouts},
          {"k", cfg.method_params.k},
          {"lambda", cfg.method_params.lambda},
          {"mu", cfg.method_params.mu},
          {"lambda_ewc", m.selected_lambda_ewc},
          {"keep_hessians", cfg.keep_hessians},
          {"seeds", seeds}};
}

nlohmann::json diagnostics_json(const LifelongMetrics& m) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& s : m.seeds)
    if (s.ok) a.push_back(diagnostics_seed_json(s));
  return {{"method", to_string(m.config.method)}, {"seeds", a}};
}

nlohmann::json tasks_manifest_json(const LifelongMetrics& m) {
  nlohmann::json seeds = nlohmann::json::array();
  for (const auto& s : m.seeds) {
    nlohmann::json tasks = nlohmann::json::array();
    for (const auto& t : s.tasks) tasks.push_back(to_json(t));
    seeds.push_back({{"seed", s.seed}, {"tasks", tasks}});
  }
  return {{"seeds", seeds}};
}

void emit_outputs(const LifelongMetrics& m, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());
  write_file_atomic(dir / "lifelong_metrics.csv", metrics_csv(m));
  write_file_atomic(dir / "curves.csv", curves_csv(m));
  write_file_atomic(dir / "summary.json", summary_json(m).dump(2) + "\n");
  write_file_atomic(dir / "checkpoint.json", checkpoint_json(m).dump() + "\n");
  write_file_atomic(dir / "tasks.json", tasks_manifest_json(m).dump() + "\n");
  write_file_atomic(dir / "diagnostics.json", diagnostics_json(m).dump(2) + "\n");
  std::vector<TaskRow> rows;
  std::vector<CurveRow> curves;
  for (const auto& s : m.seeds) {
    rows.insert(rows.end(), s.rows.begin(), s.rows.end());
    curves.insert(curves.end(), s.curves.begin(), s.curves.end());
  }
  write_plots(rows, curves, m.config.method_params.k, to_string(m.config.method), dir);
}

// ---------------------------------------------------------------------------
// Re-loading

namespace {

std::vector<std::vector<std::string>> parse_csv(const std::string& text, const char* header,
                                                std::size_t columns) {
  std::istringstream is(text);
  std::string line;
  require(static_cast<bool>(std::getline(is, line)) && line == header,
          std::string("unexpected CSV header, want '") + header + "'", ErrorKind::Io);
  std::vector<std::vector<std::string>> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    require(cells.size() == columns, "malformed CSV row: " + line, ErrorKind::Io);
    out.push_back(std::move(cells));
  }
  return out;
}

double to_d(const std::string& s) { return std::strtod(s.c_str(), nullptr); }
long long to_i(const std::string& s) { return std::strtoll(s.c_str(), nullptr, 10); }

}  // namespace

std::vector<TaskRow> parse_metrics_csv(const std::string& text) {
  std::vector<TaskRow> rows;
  for (const auto& c : parse_csv(text, kMetricsHeader, 8)) {
    TaskRow r;
    r.seed = to_i(c[0]);
    r.task_index = static_cast<int>(to_i(c[1]));
    r.task_id = static_cast<int>(to_i(c[2]));
    r.start_return = to_d(c[3]);
    r.tune_return = to_d(c[4]);
    r.update_return = to_d(c[5]);
    r.final_return = to_d(c[6]);
    r.env_steps_used = static_cast<long>(to_i(c[7]));
    rows.push_back(r);
  }
  return rows;
}

std::vector<CurveRow> parse_curves_csv(const std::string& text) {
  std::vector<CurveRow> rows;
  for (const auto& c : parse_csv(text, kCurvesHeader, 4))
    rows.push_back({to_i(c[0]), static_cast<int>(to_i(c[1])), static_cast<int>(to_i(c[2])),
                    to_d(c[3])});
  return rows;
}

namespace {

/// Policy for task_id stored in one seed block of a checkpoint.
std::optional<PolicyParams> checkpoint_policy(const nlohmann::json& ck, const nlohmann::json& seed,
                                              const PolicyLayout& layout, int task_id) {
  const std::string method = ck.at("method").get<std::string>();
  const double sigma = ck.at("sigma").get<double>();
  if (method == "stl") {
    for (const auto& p : seed.at("policies"))
      if (p.at("task_id").get<int>() == task_id) {
        PolicyParams out{layout, vector_from_json(p.at("theta")), p.at("sigma").get<double>()};
        out.validate();
        return out;
      }
    return std::nullopt;
  }
  if (method == "ewc") {
    const EwcState st = ewc_state_from_json(seed.at("ewc"), layout);
    return ewc_policy_for(st, task_id);
  }
  const KnowledgeBase kb = kb_from_json(seed.at("kb"));
  for (const auto& rj : seed.at("records")) {
    const TaskRecord rec = record_from_json(rj);
    if (rec.task_id != task_id) continue;
    const Vector& s = rec.s_current.size() ? rec.s_current : rec.s;
    return compose_policy(kb.L, pad_coeffs(s, kb.columns()), std::nullopt, sigma, layout);
  }
  return std::nullopt;
}

}  // namespace

std::vector<EvalRow> evaluate_checkpoint(const nlohmann::json& ck, const nlohmann::json& manifest) {
  try {
    require(ck.value("format", "") == "lpgftw-checkpoint", "not a checkpoint file", ErrorKind::Config);
    const TaskFamilySpec family = family_from_json(ck.at("family"));
    const PolicyLayout layout = family.policy_layout();
    const double gamma = ck.at("gamma").get<double>();
    const int n = ck.at("eval_rollouts").get<int>();
    std::vector<EvalRow> out;
    for (const auto& seed : ck.at("seeds")) {
      if (!seed.value("ok", false)) continue;
      const std::int64_t sv = seed.at("seed").get<std::int64_t>();
      const nlohmann::json* tasks = nullptr;
      if (manifest.contains("seeds")) {
        for (const auto& ms : manifest.at("seeds"))
          if (ms.at("seed").get<std::int64_t>() == sv) tasks = &ms.at("tasks");
      } else {
        tasks = &manifest.at("tasks");
      }
      if (!tasks) continue;
      for (const auto& tj : *tasks) {
        const TaskInstance task = task_from_json(tj);
        const auto p = checkpoint_policy(ck, seed, layout, task.task_id);
        if (!p) continue;
        Rng rng(eval_seed(sv, task.task_id));
        const EvalResult er = evaluate_policy(task, *p, n, gamma, rng);
        out.push_back({sv, task.task_id, er.mean, er.std_error});
      }
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Config, std::string("malformed checkpoint or manifest: ") + e.what());
  }
}

nlohmann::json replay_diagnostics(const nlohmann::json& ck) {
  try {
    const std::string method = ck.at("method").get<std::string>();
    nlohmann::json seeds = nlohmann::json::array();
    if (method != "lpg_ftw" && method != "pg_ella") return {{"method", method}, {"seeds", seeds}};
    const int k = ck.at("k").get<int>();
    const double lambda = ck.at("lambda").get<double>();
    const double mu = ck.at("mu").get<double>();
    for (const auto& seed : ck.at("seeds")) {
      if (!seed.value("ok", false)) continue;
      std::vector<Matrix> hist;
      for (const auto& b : seed.at("L_history")) hist.push_back(matrix_from_blob(b));
      const StabilitySeries st = stability_series(hist, k);
      nlohmann::json js = {{"seed", seed.at("seed")},
                           {"stability_scaled", st.scaled},
                           {"stability_trend_ratio",
                            num_or_null(trend_ratio_last(st, 10))}};
      std::vector<TaskRecord> recs;
      for (const auto& rj : seed.at("records_in_order")) recs.push_back(record_from_json(rj));
      const bool curvature = !recs.empty() && recs.front().H.size() > 0;
      if (curvature) {
        std::map<std::string, const Matrix*> by_hash;
        for (const auto& L : hist) by_hash.emplace(matrix_hash(L), &L);
        std::vector<double> ad, l2;
        for (std::size_t i = 0; i < recs.size(); ++i) {
          const TaskRecord& rec = recs[i];
          auto it = by_hash.find(rec.L_snapshot_hash);
          if (it == by_hash.end()) continue;
          const Matrix& L = *it->second;
          if (L.cols() != rec.s.size()) continue;
          ad.push_back(check_assumption_d(L, rec.H, rec.s).value);
          if (method == "lpg_ftw" && static_cast<int>(i) >= k) {
            const double gi = inf_norm(rec.g);
            const double v = check_lemma2(L, rec.s, rec.alpha, rec.H, rec.g, mu).max_violation;
            l2.push_back(gi > 0 ? v / gi : v);
          }
        }
        js["assumption_d"] = ad;
        if (method == "lpg_ftw") {
          js["lemma2_relative_violation"] = l2;
          const SurrogateSeries ss = surrogate_series(hist, recs, lambda, mu);
          js["surrogate_values"] = ss.values;
          js["surrogate_successive"] = ss.successive;
          js["surrogate_settling"] = settling(ss.successive);
          js["first_order"] = surrogate_gradient(hist.back(), recs, lambda).norm();
        }
      } else {
        js["note"] = "curvature not stored; rerun with keep_hessians for the full report";
      }
      seeds.push_back(js);
    }
    return {{"method", method}, {"seeds", seeds}};
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Config, std::string("malformed checkpoint: ") + e.what());
  }
}

}  // namespace lpgftw
