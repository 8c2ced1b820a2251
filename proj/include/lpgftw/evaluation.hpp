#pragma once

#include "lpgftw/env.hpp"
#include "lpgftw/policy.hpp"

namespace lpgftw {

struct EvalResult {
  double mean = 0.0;
  double std_error = 0.0;
};

/// Mean discounted return over n_rollouts fresh rollouts with the policy's own sigma.
EvalResult evaluate_policy(const TaskInstance& task, const PolicyParams& p, int n_rollouts,
                           double gamma, Rng& rng);

}  // namespace lpgftw
