#pragma once

#include <optional>

#include "lpgftw/common.hpp"

namespace lpgftw {

enum class FeatureMap { RawState, StateBias };

const char* to_string(FeatureMap m);
FeatureMap feature_map_from_string(const std::string& s);

int feature_dim(FeatureMap m, int state_dim);
Vector make_features(FeatureMap m, const Vector& state);

/// Shape of a linear-Gaussian policy. theta stores the action_dim x feature_dim
/// weight matrix row-major, so row j occupies [j*feature_dim, (j+1)*feature_dim).
struct PolicyLayout {
  int action_dim = 1;
  int feature_dim = 1;
  FeatureMap feature_map = FeatureMap::RawState;

  int d() const { return action_dim * feature_dim; }
  bool operator==(const PolicyLayout&) const = default;
};

struct PolicyParams {
  PolicyLayout layout;
  Vector theta;
  double sigma = 1.0;

  PolicyParams() = default;
  PolicyParams(PolicyLayout l, Vector t, double s);

  static PolicyParams zeros(PolicyLayout l, double sigma);

  /// Mean action W * features.
  Vector mean(const Vector& features) const;
  void validate() const;
};

/// theta = L*s (+ epsilon during knowledge-base initialization).
struct FactoredPolicy {
  Matrix L;
  Vector s;
  std::optional<Vector> epsilon;
  double sigma = 1.0;

  Vector theta() const;
};

PolicyParams compose_policy(const Matrix& L, const Vector& s,
                            const std::optional<Vector>& epsilon, double sigma,
                            const PolicyLayout& layout);

struct ActionSample {
  Vector action;
  double log_prob = 0.0;
};

ActionSample sample_action(const PolicyParams& p, const Vector& features, Rng& rng);

/// Sum over action dimensions of the scalar Gaussian log-density.
double log_prob(const PolicyParams& p, const Vector& features, const Vector& action);

/// d/dtheta log_prob, laid out like theta: row j is ((u_j - w_j.x) / sigma^2) x.
Vector grad_log_prob(const PolicyParams& p, const Vector& features,
                     const Vector& action);

/// d/dlog(sigma) log_prob.
double grad_log_sigma(const PolicyParams& p, const Vector& features,
                      const Vector& action);

}  // namespace lpgftw
