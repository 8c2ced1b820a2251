#include "lpgftw/env.hpp"

#include <cmath>
#include <sstream>

#include <json.hpp>

#include "lpgftw/serialization.hpp"

namespace lpgftw {

namespace {

constexpr int kMaxRejections = 100;

std::string entry_key(char name, int i, int j) {
  std::ostringstream os;
  os << name << '[' << i << ',' << j << ']';
  return os.str();
}

bool parse_entry_key(const std::string& key, char& name, int& i, int& j) {
  if (key.size() < 6 || (key[0] != 'A' && key[0] != 'B') || key[1] != '[' ||
      key.back() != ']')
    return false;
  name = key[0];
  char comma = 0;
  std::istringstream is(key.substr(2, key.size() - 3));
  return static_cast<bool>(is >> i >> comma >> j) && comma == ',' && is.eof();
}

bool is_symmetric_pd(const Matrix& m) {
  if (m.rows() != m.cols() || m.rows() == 0) return false;
  if (!(m - m.transpose()).isZero(1e-12 * (1.0 + m.cwiseAbs().maxCoeff()))) return false;
  Eigen::LLT<Matrix> llt(m);
  return llt.info() == Eigen::Success;
}

double draw_uniform(const Interval& iv, Rng& rng) {
  if (iv.lo == iv.hi) return iv.lo;
  std::uniform_real_distribution<double> u(iv.lo, iv.hi);
  return u(rng);
}

}  // namespace

const char* to_string(FamilyId f) { return f == FamilyId::Lqr ? "lqr" : "point_mass"; }

FamilyId family_from_string(const std::string& s) {
  if (s == "lqr") return FamilyId::Lqr;
  if (s == "point_mass") return FamilyId::PointMass;
  throw Error(ErrorKind::Config, "unknown task family '" + s + "'");
}

void TaskFamilySpec::validate() const {
  require(state_dim >= 1, "state_dim must be >= 1", ErrorKind::Config);
  require(action_dim >= 1, "action_dim must be >= 1", ErrorKind::Config);
  require(horizon >= 1, "horizon must be >= 1", ErrorKind::Config);
  require(noise_std >= 0.0, "noise_std must be nonnegative", ErrorKind::Config);
  require(init_spread >= 0.0, "init_spread must be nonnegative", ErrorKind::Config);
  require(eval_sigma > 0.0, "eval_sigma must be positive", ErrorKind::Config);
  require(init_mean.size() == state_dim, "init_mean has wrong length", ErrorKind::Config);
  for (const auto& [key, iv] : variation_ranges)
    require(iv.lo <= iv.hi, "variation interval '" + key + "' has lower > upper",
            ErrorKind::Config);

  if (family_id == FamilyId::Lqr) {
    require(nominal_A.rows() == state_dim && nominal_A.cols() == state_dim,
            "lqr A must be state_dim x state_dim", ErrorKind::Config);
    require(nominal_B.rows() == state_dim && nominal_B.cols() == action_dim,
            "lqr B must be state_dim x action_dim", ErrorKind::Config);
    require(Q.rows() == state_dim && is_symmetric_pd(Q),
            "lqr Q must be symmetric positive definite", ErrorKind::Config);
    require(R.rows() == action_dim && is_symmetric_pd(R),
            "lqr R must be symmetric positive definite", ErrorKind::Config);
    for (const auto& [key, iv] : variation_ranges) {
      char name = 0;
      int i = -1, j = -1;
      require(parse_entry_key(key, name, i, j), "unknown lqr coefficient '" + key + "'",
              ErrorKind::Config);
      const int cols = name == 'A' ? state_dim : action_dim;
      require(i >= 0 && i < state_dim && j >= 0 && j < cols,
              "lqr coefficient '" + key + "' out of range", ErrorKind::Config);
    }
  } else {
    require(state_dim == 4 && action_dim == 2,
            "point_mass has state (px,py,vx,vy) and a 2-d force action", ErrorKind::Config);
    require(mass > 0.0, "point_mass mass must be positive", ErrorKind::Config);
    for (const auto& [key, iv] : variation_ranges) {
      require(key == "gravity_scale" || key == "mass" || key == "velocity_weight" ||
                  key == "control_weight",
              "unknown point_mass coefficient '" + key + "'", ErrorKind::Config);
      if (key == "mass") require(iv.lo > 0.0, "mass interval must be positive", ErrorKind::Config);
    }
  }
}

PolicyLayout TaskFamilySpec::policy_layout() const {
  return PolicyLayout{action_dim, feature_dim(feature_map, state_dim), feature_map};
}

TaskFamilySpec scalar_lqr_family(double a, double b, double rel_variation, int horizon) {
  return lqr_family(Matrix::Constant(1, 1, a), Matrix::Constant(1, 1, b),
                    Matrix::Identity(1, 1), Matrix::Identity(1, 1), rel_variation, horizon);
}

TaskFamilySpec lqr_family(Matrix A, Matrix B, Matrix Q, Matrix R, double rel_variation,
                          int horizon) {
  TaskFamilySpec f;
  f.family_id = FamilyId::Lqr;
  f.state_dim = static_cast<int>(A.rows());
  f.action_dim = static_cast<int>(B.cols());
  f.horizon = horizon;
  auto add_ranges = [&](const Matrix& m, char name) {
    for (int i = 0; i < m.rows(); ++i)
      for (int j = 0; j < m.cols(); ++j) {
        const double v = m(i, j);
        if (v == 0.0 || rel_variation == 0.0) continue;
        const double lo = v * (1.0 - rel_variation), hi = v * (1.0 + rel_variation);
        f.variation_ranges[entry_key(name, i, j)] = Interval{std::min(lo, hi), std::max(lo, hi)};
      }
  };
  add_ranges(A, 'A');
  add_ranges(B, 'B');
  f.nominal_A = std::move(A);
  f.nominal_B = std::move(B);
  f.Q = std::move(Q);
  f.R = std::move(R);
  f.init_mean = Vector::Zero(f.state_dim);
  f.init_spread = 1.0;
  f.validate();
  return f;
}

TaskFamilySpec point_mass_family(Interval gravity_scale, int horizon) {
  TaskFamilySpec f;
  f.family_id = FamilyId::PointMass;
  f.state_dim = 4;
  f.action_dim = 2;
  f.horizon = horizon;
  f.feature_map = FeatureMap::StateBias;
  f.variation_ranges["gravity_scale"] = gravity_scale;
  f.init_mean = Vector::Zero(4);
  f.init_spread = 0.1;
  f.validate();
  return f;
}

Vector TaskInstance::sample_initial_state(Rng& rng) const {
  if (init_spread == 0.0) return init_mean;
  return init_mean + init_spread * randn(init_mean.size(), rng);
}

TaskInstance nominal_task(std::shared_ptr<const TaskFamilySpec> family, int task_id) {
  family->validate();
  TaskInstance t;
  t.task_id = task_id;
  t.family = family;
  t.A = family->nominal_A;
  t.B = family->nominal_B;
  t.Q = family->Q;
  t.R = family->R;
  t.gravity_scale = family->gravity_scale;
  t.mass = family->mass;
  t.velocity_weight = family->velocity_weight;
  t.control_weight = family->control_weight;
  t.init_mean = family->init_mean;
  t.init_spread = family->init_spread;
  t.noise_std = family->noise_std;
  t.horizon = family->horizon;
  return t;
}

TaskInstance sample_task(std::shared_ptr<const TaskFamilySpec> family, Rng& rng,
                         int task_id) {
  family->validate();
  for (int attempt = 0; attempt < kMaxRejections; ++attempt) {
    TaskInstance t = nominal_task(family, task_id);
    for (const auto& [key, iv] : family->variation_ranges) {
      const double v = draw_uniform(iv, rng);
      t.coefficients[key] = v;
      if (family->family_id == FamilyId::Lqr) {
        char name = 0;
        int i = 0, j = 0;
        parse_entry_key(key, name, i, j);
        (name == 'A' ? t.A : t.B)(i, j) = v;
      } else if (key == "gravity_scale") {
        t.gravity_scale = v;
      } else if (key == "mass") {
        t.mass = v;
      } else if (key == "velocity_weight") {
        t.velocity_weight = v;
      } else {
        t.control_weight = v;
      }
    }
    if (family->family_id != FamilyId::Lqr) return t;
    try {
      solve_discounted_riccati(t.A, t.B, t.Q, t.R, 1.0);
      return t;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::UnstabilizableInstance) throw;
    }
  }
  throw Error(ErrorKind::DegenerateTaskFamily,
              "degenerate task family: no stabilizable lqr draw in 100 attempts");
}

StepResult step(const TaskInstance& task, const Vector& state, const Vector& action,
                Rng& rng) {
  require(state.size() == task.state_dim(), "state dimension mismatch");
  require(action.size() == task.action_dim(), "action dimension mismatch");
  if (!state.allFinite() || !action.allFinite())
    throw Error(ErrorKind::NumericalDivergence, "numerical divergence: non-finite state or action");

  StepResult out;
  if (task.family->family_id == FamilyId::Lqr) {
    out.reward = -(state.dot(task.Q * state) + action.dot(task.R * action));
    out.next_state = task.A * state + task.B * action;
    if (task.noise_std > 0.0) out.next_state += task.noise_std * randn(state.size(), rng);
  } else {
    // semi-implicit Euler: velocity first, then position with the new velocity
    Vector next = state;
    Eigen::Vector2d accel = action / task.mass;
    accel[1] -= task.gravity_scale * kGravity;
    next.segment<2>(2) += kPointMassDt * accel;
    if (task.noise_std > 0.0) next.segment<2>(2) += task.noise_std * randn(2, rng);
    next.segment<2>(0) += kPointMassDt * next.segment<2>(2);
    out.reward = task.velocity_weight * next[2] - task.control_weight * action.squaredNorm();
    out.next_state = std::move(next);
  }
  if (!out.next_state.allFinite() || !std::isfinite(out.reward))
    throw Error(ErrorKind::NumericalDivergence, "numerical divergence: state left finite range");
  return out;
}

Trajectory rollout(const TaskInstance& task, const PolicyParams& policy, int horizon,
                   Rng& rng) {
  require(horizon >= 1, "horizon must be >= 1");
  require(policy.layout == task.policy_layout(),
          "policy layout does not match the task family's feature map");
  Trajectory traj;
  traj.states.reserve(horizon);
  traj.actions.reserve(horizon);
  traj.rewards.reserve(horizon);
  traj.log_probs.reserve(horizon);
  Vector x = task.sample_initial_state(rng);
  for (int i = 0; i < horizon; ++i) {
    ActionSample a = sample_action(policy, make_features(policy.layout.feature_map, x), rng);
    StepResult r = step(task, x, a.action, rng);
    traj.states.push_back(std::move(x));
    traj.actions.push_back(std::move(a.action));
    traj.rewards.push_back(r.reward);
    traj.log_probs.push_back(a.log_prob);
    x = std::move(r.next_state);
  }
  return traj;
}

double discounted_return(const Trajectory& traj, double gamma) {
  require(gamma >= 0.0 && gamma < 1.0, "gamma must lie in [0, 1)");
  double total = 0.0, discount = 1.0;
  for (double r : traj.rewards) {
    total += discount * r;
    discount *= gamma;
  }
  return total;
}

RiccatiSolution solve_discounted_riccati(const Matrix& A, const Matrix& B, const Matrix& Q,
                                         const Matrix& R, double gamma) {
  constexpr double kTol = 1e-10;
  constexpr int kMaxIter = 10000;
  constexpr double kBlowUp = 1e12;
  RiccatiSolution sol;
  sol.P = Q;
  for (int it = 1; it <= kMaxIter; ++it) {
    const Matrix S = R + gamma * B.transpose() * sol.P * B;
    sol.K = -gamma * S.ldlt().solve(B.transpose() * sol.P * A);
    const Matrix closed = A + B * sol.K;
    // Joseph-form update keeps P symmetric positive semidefinite.
    Matrix next = Q + sol.K.transpose() * R * sol.K + gamma * closed.transpose() * sol.P * closed;
    next = 0.5 * (next + next.transpose());
    if (!next.allFinite() || next.cwiseAbs().maxCoeff() > kBlowUp)
      throw Error(ErrorKind::UnstabilizableInstance,
                  "unstabilizable instance: Riccati iteration diverged");
    const double change = (next - sol.P).cwiseAbs().maxCoeff();
    sol.P = std::move(next);
    sol.iterations = it;
    if (change <= kTol) {
      const Matrix S2 = R + gamma * B.transpose() * sol.P * B;
      sol.K = -gamma * S2.ldlt().solve(B.transpose() * sol.P * A);
      return sol;
    }
  }
  throw Error(ErrorKind::UnstabilizableInstance,
              "unstabilizable instance: Riccati iteration did not converge");
}

PolicyParams optimal_lqr_policy(const TaskInstance& task, double gamma) {
  require(task.family->family_id == FamilyId::Lqr, "oracle policy needs an lqr task");
  const RiccatiSolution sol = solve_discounted_riccati(task.A, task.B, task.Q, task.R, gamma);
  const PolicyLayout layout = task.policy_layout();
  PolicyParams p = PolicyParams::zeros(layout, task.family->eval_sigma);
  for (int j = 0; j < layout.action_dim; ++j)
    for (int i = 0; i < task.state_dim(); ++i) p.theta[j * layout.feature_dim + i] = sol.K(j, i);
  return p;
}

// ---------------------------------------------------------------------------
// JSON

nlohmann::json to_json(const TaskFamilySpec& f) {
  nlohmann::json ranges = nlohmann::json::object();
  for (const auto& [k, iv] : f.variation_ranges) ranges[k] = {iv.lo, iv.hi};
  nlohmann::json j = {
      {"family_id", to_string(f.family_id)},
      {"state_dim", f.state_dim},
      {"action_dim", f.action_dim},
      {"horizon", f.horizon},
      {"variation_ranges", ranges},
      {"noise_std", f.noise_std},
      {"init_mean", vector_to_json(f.init_mean)},
      {"init_spread", f.init_spread},
      {"feature_map", to_string(f.feature_map)},
      {"eval_sigma", f.eval_sigma},
  };
  if (f.family_id == FamilyId::Lqr) {
    j["A"] = matrix_to_json(f.nominal_A);
    j["B"] = matrix_to_json(f.nominal_B);
    j["Q"] = matrix_to_json(f.Q);
    j["R"] = matrix_to_json(f.R);
  } else {
    j["gravity_scale"] = f.gravity_scale;
    j["mass"] = f.mass;
    j["velocity_weight"] = f.velocity_weight;
    j["control_weight"] = f.control_weight;
  }
  return j;
}

TaskFamilySpec family_from_json(const nlohmann::json& j) {
  static const std::vector<std::string> kKeys = {
      "family_id", "state_dim", "action_dim", "horizon", "variation_ranges",
      "noise_std", "init_mean", "init_spread", "feature_map", "eval_sigma",
      "A", "B", "Q", "R", "gravity_scale", "mass", "velocity_weight",
      "control_weight", "relative_variation"};
  reject_unknown_keys(j, kKeys, "family");
  TaskFamilySpec f;
  try {
    f.family_id = family_from_string(j.at("family_id").get<std::string>());
    f.horizon = j.value("horizon", f.horizon);
    f.noise_std = j.value("noise_std", 0.0);
    f.eval_sigma = j.value("eval_sigma", f.eval_sigma);
    if (f.family_id == FamilyId::Lqr) {
      Matrix A = matrix_from_json(j.at("A"));
      Matrix B = matrix_from_json(j.at("B"));
      Matrix Q = j.contains("Q") ? matrix_from_json(j.at("Q")) : Matrix::Identity(A.rows(), A.rows());
      Matrix R = j.contains("R") ? matrix_from_json(j.at("R")) : Matrix::Identity(B.cols(), B.cols());
      const double rel = j.value("relative_variation", 0.0);
      const FeatureMap fm = feature_map_from_string(j.value("feature_map", "raw_state"));
      const double sigma = f.eval_sigma, noise = f.noise_std;
      f = lqr_family(std::move(A), std::move(B), std::move(Q), std::move(R), rel, f.horizon);
      f.feature_map = fm;
      f.eval_sigma = sigma;
      f.noise_std = noise;
    } else {
      f.state_dim = 4;
      f.action_dim = 2;
      f.feature_map = FeatureMap::StateBias;
      f.gravity_scale = j.value("gravity_scale", 1.0);
      f.mass = j.value("mass", 1.0);
      f.velocity_weight = j.value("velocity_weight", 1.0);
      f.control_weight = j.value("control_weight", 0.1);
      f.init_mean = Vector::Zero(4);
      f.init_spread = 0.1;
      if (j.contains("feature_map"))
        f.feature_map = feature_map_from_string(j.at("feature_map").get<std::string>());
    }
    if (j.contains("state_dim")) require(j.at("state_dim").get<int>() == f.state_dim,
                                         "state_dim disagrees with matrices", ErrorKind::Config);
    if (j.contains("action_dim")) require(j.at("action_dim").get<int>() == f.action_dim,
                                          "action_dim disagrees with matrices", ErrorKind::Config);
    if (j.contains("variation_ranges")) {
      for (const auto& [k, v] : j.at("variation_ranges").items()) {
        require(v.is_array() && v.size() == 2, "variation range '" + k + "' must be [lo, hi]",
                ErrorKind::Config);
        f.variation_ranges[k] = Interval{v[0].get<double>(), v[1].get<double>()};
      }
    }
    if (j.contains("init_mean")) f.init_mean = vector_from_json(j.at("init_mean"));
    if (j.contains("init_spread")) f.init_spread = j.at("init_spread").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Config, std::string("malformed family: ") + e.what());
  }
  f.validate();
  return f;
}

nlohmann::json to_json(const TaskInstance& t) {
  nlohmann::json coeffs = nlohmann::json::object();
  for (const auto& [k, v] : t.coefficients) coeffs[k] = v;
  nlohmann::json j = {
      {"task_id", t.task_id},
      {"family", to_json(*t.family)},
      {"coefficients", coeffs},
      {"init_mean", vector_to_json(t.init_mean)},
      {"init_spread", t.init_spread},
      {"noise_std", t.noise_std},
      {"horizon", t.horizon},
  };
  if (t.family->family_id == FamilyId::Lqr) {
    j["A"] = matrix_to_json(t.A);
    j["B"] = matrix_to_json(t.B);
    j["Q"] = matrix_to_json(t.Q);
    j["R"] = matrix_to_json(t.R);
  } else {
    j["gravity_scale"] = t.gravity_scale;
    j["mass"] = t.mass;
    j["velocity_weight"] = t.velocity_weight;
    j["control_weight"] = t.control_weight;
  }
  return j;
}

TaskInstance task_from_json(const nlohmann::json& j) {
  try {
    auto family = std::make_shared<const TaskFamilySpec>(family_from_json(j.at("family")));
    TaskInstance t = nominal_task(family, j.at("task_id").get<int>());
    for (const auto& [k, v] : j.at("coefficients").items()) t.coefficients[k] = v.get<double>();
    t.init_mean = vector_from_json(j.at("init_mean"));
    t.init_spread = j.at("init_spread").get<double>();
    t.noise_std = j.at("noise_std").get<double>();
    t.horizon = j.at("horizon").get<int>();
    if (family->family_id == FamilyId::Lqr) {
      t.A = matrix_from_json(j.at("A"));
      t.B = matrix_from_json(j.at("B"));
      t.Q = matrix_from_json(j.at("Q"));
      t.R = matrix_from_json(j.at("R"));
    } else {
      t.gravity_scale = j.at("gravity_scale").get<double>();
      t.mass = j.at("mass").get<double>();
      t.velocity_weight = j.at("velocity_weight").get<double>();
      t.control_weight = j.at("control_weight").get<double>();
    }
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Config, std::string("malformed task: ") + e.what());
  }
}

}  // namespace lpgftw
