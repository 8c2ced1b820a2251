#include "lpgftw/pg.hpp"

#include <cmath>

namespace lpgftw {

const char* to_string(HessianKind h) { return h == HessianKind::Npg ? "npg" : "reinforce"; }

HessianKind hessian_kind_from_string(const std::string& s) {
  if (s == "npg") return HessianKind::Npg;
  if (s == "reinforce") return HessianKind::Reinforce;
  throw Error(ErrorKind::Config, "unknown hessian kind '" + s + "'");
}

void NPGConfig::validate() const {
  require(delta > 0.0, "npg delta must be positive", ErrorKind::Config);
  require(gae_lambda >= 0.0 && gae_lambda <= 1.0, "gae_lambda must lie in [0, 1]",
          ErrorKind::Config);
  require(gamma >= 0.0 && gamma < 1.0, "gamma must lie in [0, 1)", ErrorKind::Config);
  require(fisher_damping > 0.0, "fisher_damping must be positive", ErrorKind::Config);
  require(fisher_damping_rel >= 0.0, "fisher_damping_rel must be nonnegative",
          ErrorKind::Config);
  require(sigma_lr >= 0.0, "sigma_lr must be nonnegative", ErrorKind::Config);
}

Vector value_features(const Vector& state, std::size_t t, std::size_t horizon) {
  const auto n = state.size();
  Vector f(2 * n + 2);
  f.head(n) = state;
  f.segment(n, n) = state.cwiseAbs2();
  f[2 * n] = horizon == 0 ? 0.0 : static_cast<double>(t) / static_cast<double>(horizon);
  f[2 * n + 1] = 1.0;
  return f;
}

double ValueBaseline::predict(const Vector& state, std::size_t t, std::size_t horizon) const {
  if (weights.size() == 0) return 0.0;
  return weights.dot(value_features(state, t, horizon));
}

std::size_t PGBatch::num_steps() const {
  std::size_t n = 0;
  for (const auto& tr : trajectories) n += tr.size();
  return n;
}

bool PGBatch::has_advantages() const {
  if (advantages.size() != trajectories.size()) return false;
  for (std::size_t i = 0; i < trajectories.size(); ++i)
    if (advantages[i].size() != trajectories[i].size()) return false;
  return true;
}

double PGBatch::mean_return(double gamma) const {
  if (trajectories.empty()) return 0.0;
  double total = 0.0;
  for (const auto& tr : trajectories) total += discounted_return(tr, gamma);
  return total / static_cast<double>(trajectories.size());
}

PGBatch collect_batch(const TaskInstance& task, const PolicyParams& p, int n_traj, Rng& rng) {
  require(n_traj >= 1, "a batch needs at least one trajectory");
  PGBatch batch;
  batch.task_id = task.task_id;
  batch.trajectories.reserve(n_traj);
  for (int i = 0; i < n_traj; ++i) {
    Rng traj_rng(child_seed(rng));
    batch.trajectories.push_back(rollout(task, p, task.horizon, traj_rng));
  }
  return batch;
}

ValueBaseline fit_value_baseline(const PGBatch& batch, double gamma) {
  require(!batch.trajectories.empty(), "cannot fit a baseline on an empty batch");
  const Eigen::Index n_feat =
      2 * batch.trajectories.front().states.front().size() + 2;
  Matrix gram = Matrix::Zero(n_feat, n_feat);
  Vector rhs = Vector::Zero(n_feat);
  for (const auto& tr : batch.trajectories) {
    const std::size_t len = tr.size();
    double to_go = 0.0;
    for (std::size_t i = len; i-- > 0;) {
      to_go = tr.rewards[i] + gamma * to_go;
      const Vector f = value_features(tr.states[i], i, len);
      gram.selfadjointView<Eigen::Lower>().rankUpdate(f);
      rhs += to_go * f;
    }
  }
  gram = gram.selfadjointView<Eigen::Lower>();
  gram.diagonal().array() += 1e-6;
  ValueBaseline b;
  b.weights = gram.ldlt().solve(rhs);
  return b;
}

std::vector<double> gae_advantages(const Trajectory& traj, const ValueBaseline& baseline,
                                   double gamma, double gae_lambda) {
  const std::size_t len = traj.size();
  std::vector<double> adv(len, 0.0);
  double running = 0.0;
  double next_value = 0.0;  // terminal value
  for (std::size_t i = len; i-- > 0;) {
    const double value = baseline.predict(traj.states[i], i, len);
    const double td = traj.rewards[i] + gamma * next_value - value;
    running = td + gamma * gae_lambda * running;
    adv[i] = running;
    next_value = value;
  }
  return adv;
}

void normalize_advantages(PGBatch& batch) {
  double sum = 0.0, sum_sq = 0.0;
  std::size_t n = 0;
  for (const auto& a : batch.advantages)
    for (double v : a) {
      sum += v;
      ++n;
    }
  if (n == 0) return;
  const double mean = sum / static_cast<double>(n);
  for (const auto& a : batch.advantages)
    for (double v : a) sum_sq += (v - mean) * (v - mean);
  const double sd = std::sqrt(sum_sq / static_cast<double>(n));
  const double scale = sd > 1e-12 * (1.0 + std::abs(mean)) ? 1.0 / sd : 1.0;
  for (auto& a : batch.advantages)
    for (double& v : a) v = (v - mean) * scale;
}

void compute_advantages(PGBatch& batch, const NPGConfig& cfg) {
  const ValueBaseline baseline = fit_value_baseline(batch, cfg.gamma);
  batch.advantages.clear();
  batch.advantages.reserve(batch.trajectories.size());
  for (const auto& tr : batch.trajectories)
    batch.advantages.push_back(gae_advantages(tr, baseline, cfg.gamma, cfg.gae_lambda));
  if (cfg.normalize_advantages) normalize_advantages(batch);
}

namespace {
void require_advantages(const PGBatch& batch) {
  require(batch.has_advantages(), "advantages must be computed before gradient estimates");
}
}  // namespace

Vector pg_gradient(const PGBatch& batch, const PolicyParams& p) {
  require_advantages(batch);
  Vector g = Vector::Zero(p.layout.d());
  for (std::size_t t = 0; t < batch.trajectories.size(); ++t) {
    const auto& tr = batch.trajectories[t];
    for (std::size_t i = 0; i < tr.size(); ++i) {
      const double a = batch.advantages[t][i];
      if (a == 0.0) continue;
      g += a * grad_log_prob(p, make_features(p.layout.feature_map, tr.states[i]), tr.actions[i]);
    }
  }
  return g / static_cast<double>(batch.trajectories.size());
}

Matrix fisher_raw(const PGBatch& batch, const PolicyParams& p) {
  const int d = p.layout.d();
  Matrix F = Matrix::Zero(d, d);
  const std::size_t n = batch.num_steps();
  if (n == 0) return F;
  for (const auto& tr : batch.trajectories)
    for (std::size_t i = 0; i < tr.size(); ++i)
      F.selfadjointView<Eigen::Lower>().rankUpdate(
          grad_log_prob(p, make_features(p.layout.feature_map, tr.states[i]), tr.actions[i]));
  F = F.selfadjointView<Eigen::Lower>();
  return F / static_cast<double>(n);
}

double fisher_damping(const Matrix& raw, const NPGConfig& cfg) {
  if (raw.rows() == 0) return cfg.fisher_damping;
  return cfg.fisher_damping_rel * raw.trace() / static_cast<double>(raw.rows()) +
         cfg.fisher_damping;
}

Matrix add_damping(const Matrix& raw, const NPGConfig& cfg) {
  Matrix F = raw;
  F.diagonal().array() += fisher_damping(raw, cfg);
  return F;
}

Matrix fisher(const PGBatch& batch, const PolicyParams& p, const NPGConfig& cfg) {
  return add_damping(fisher_raw(batch, p), cfg);
}

NpgStep npg_step(const Vector& g, const Matrix& F, double delta) {
  require(F.rows() == g.size() && F.cols() == g.size(), "Fisher/gradient shape mismatch");
  require(delta > 0.0, "delta must be positive");
  require(g.allFinite(), "gradient not finite", ErrorKind::NumericalDivergence);
  NpgStep out;
  out.step = Vector::Zero(g.size());
  if (g.size() == 0) {
    out.vanished = true;
    return out;
  }
  Eigen::LDLT<Matrix> ldlt(F);
  Vector y = ldlt.solve(g);
  y += ldlt.solve(g - F * y);  // one refinement sweep
  const double gy = g.dot(y);
  if (!(gy > 1e-300) || !y.allFinite()) {
    out.vanished = true;
    return out;
  }
  out.eta = std::sqrt(delta / gy);
  out.step = out.eta * y;
  return out;
}

Matrix reinforce_hessian(const PGBatch& batch, const PolicyParams& p) {
  require_advantages(batch);
  const int f = p.layout.feature_dim;
  Matrix block = Matrix::Zero(f, f);
  for (std::size_t t = 0; t < batch.trajectories.size(); ++t) {
    const auto& tr = batch.trajectories[t];
    for (std::size_t i = 0; i < tr.size(); ++i) {
      const Vector x = make_features(p.layout.feature_map, tr.states[i]);
      block.noalias() += batch.advantages[t][i] * (x * x.transpose());
    }
  }
  block *= -1.0 / (2.0 * p.sigma * p.sigma * static_cast<double>(batch.trajectories.size()));
  Matrix H = Matrix::Zero(p.layout.d(), p.layout.d());
  for (int j = 0; j < p.layout.action_dim; ++j) H.block(j * f, j * f, f, f) = block;
  return H;
}

Matrix npg_hessian(const Matrix& F, double eta) {
  if (!(eta > 0.0)) throw Error(ErrorKind::NoStepTaken, "no step taken: NPG step size is zero");
  return -F / eta;
}

GradHess grad_and_hess_at(const TaskInstance& task, const PolicyParams& p,
                          const NPGConfig& cfg, int traj_per_iter, Rng& rng) {
  PGBatch batch = collect_batch(task, p, traj_per_iter, rng);
  compute_advantages(batch, cfg);
  GradHess out;
  out.env_steps = static_cast<long>(batch.num_steps());
  out.g = pg_gradient(batch, p);
  out.F = fisher(batch, p, cfg);
  out.eta = npg_step(out.g, out.F, cfg.delta).eta;
  out.H = cfg.hessian == HessianKind::Npg ? npg_hessian(out.F, out.eta)
                                          : reinforce_hessian(batch, p);
  return out;
}

namespace {
double sigma_gradient(const PGBatch& batch, const PolicyParams& p) {
  double total = 0.0;
  for (std::size_t t = 0; t < batch.trajectories.size(); ++t) {
    const auto& tr = batch.trajectories[t];
    for (std::size_t i = 0; i < tr.size(); ++i)
      total += batch.advantages[t][i] *
               grad_log_sigma(p, make_features(p.layout.feature_map, tr.states[i]), tr.actions[i]);
  }
  return total / static_cast<double>(batch.trajectories.size());
}
}  // namespace

TrainResult npg_train(const TaskInstance& task, PolicyParams p0, const NPGConfig& cfg,
                      int n_iters, int traj_per_iter, Rng& rng,
                      const ObjectiveAugmentation& augment, bool final_grad_and_hess) {
  cfg.validate();
  require(n_iters >= 0, "n_iters must be nonnegative");
  TrainResult out;
  out.policy = std::move(p0);
  out.curve.reserve(n_iters);
  for (int it = 0; it < n_iters; ++it) {
    PGBatch batch = collect_batch(task, out.policy, traj_per_iter, rng);
    out.env_steps += static_cast<long>(batch.num_steps());
    out.curve.push_back(batch.mean_return(cfg.gamma));
    compute_advantages(batch, cfg);
    Vector g = pg_gradient(batch, out.policy);
    Matrix F = fisher(batch, out.policy, cfg);
    if (augment) augment(out.policy.theta, g, F);
    const NpgStep s = npg_step(g, F, cfg.delta);
    if (!s.vanished) {
      const double err = std::abs(s.step.dot(F * s.step) - cfg.delta) / cfg.delta;
      out.max_constraint_error = std::max(out.max_constraint_error, err);
    }
    if (cfg.learn_sigma) {
      const double grad = sigma_gradient(batch, out.policy);
      out.policy.sigma *= std::exp(std::clamp(cfg.sigma_lr * grad, -0.1, 0.1));
    }
    out.policy.theta += s.step;
    out.policy.validate();
  }
  if (final_grad_and_hess) {
    GradHess gh = grad_and_hess_at(task, out.policy, cfg, traj_per_iter, rng);
    out.final_g = std::move(gh.g);
    out.final_H = std::move(gh.H);
    out.final_eta = gh.eta;
    out.env_steps += gh.env_steps;
  }
  return out;
}

TrainResult stl_train(const TaskInstance& task, const PolicyParams& p0, const NPGConfig& cfg,
                      int n_iters, int traj_per_iter, Rng& rng) {
  return npg_train(task, p0, cfg, n_iters, traj_per_iter, rng);
}

}  // namespace lpgftw
