#include "lpgftw/evaluation.hpp"

#include <cmath>

namespace lpgftw {

EvalResult evaluate_policy(const TaskInstance& task, const PolicyParams& p, int n_rollouts,
                           double gamma, Rng& rng) {
  require(n_rollouts >= 1, "evaluation needs at least one rollout");
  Vector returns(n_rollouts);
  for (int i = 0; i < n_rollouts; ++i) {
    Rng r(child_seed(rng));
    returns[i] = discounted_return(rollout(task, p, task.horizon, r), gamma);
  }
  const double n = static_cast<double>(n_rollouts);
  EvalResult out;
  out.mean = returns.mean();
  if (n_rollouts > 1) {
    const double var = (returns.array() - out.mean).square().sum() / (n - 1.0);
    out.std_error = std::sqrt(var / n);
  }
  return out;
}

}  // namespace lpgftw
