#include "lpgftw/policy.hpp"

#include <cmath>

namespace lpgftw {

namespace {
constexpr double kLog2Pi = 1.8378770664093454835606594728112;

Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
weights(const PolicyParams& p) {
  return {p.theta.data(), p.layout.action_dim, p.layout.feature_dim};
}

void check_shapes(const PolicyParams& p, const Vector& features) {
  require(features.size() == p.layout.feature_dim,
          "feature length " + std::to_string(features.size()) +
              " does not match policy layout " + std::to_string(p.layout.feature_dim));
}
}  // namespace

const char* to_string(FeatureMap m) {
  return m == FeatureMap::RawState ? "raw_state" : "state_bias";
}

FeatureMap feature_map_from_string(const std::string& s) {
  if (s == "raw_state") return FeatureMap::RawState;
  if (s == "state_bias") return FeatureMap::StateBias;
  throw Error(ErrorKind::Config, "unknown feature map '" + s + "'");
}

int feature_dim(FeatureMap m, int state_dim) {
  return m == FeatureMap::RawState ? state_dim : state_dim + 1;
}

Vector make_features(FeatureMap m, const Vector& state) {
  if (m == FeatureMap::RawState) return state;
  Vector f(state.size() + 1);
  f.head(state.size()) = state;
  f[state.size()] = 1.0;
  return f;
}

PolicyParams::PolicyParams(PolicyLayout l, Vector t, double s)
    : layout(l), theta(std::move(t)), sigma(s) {
  validate();
}

PolicyParams PolicyParams::zeros(PolicyLayout l, double sigma) {
  return PolicyParams(l, Vector::Zero(l.d()), sigma);
}

Vector PolicyParams::mean(const Vector& features) const {
  check_shapes(*this, features);
  return weights(*this) * features;
}

void PolicyParams::validate() const {
  require(layout.action_dim >= 1 && layout.feature_dim >= 1, "empty policy layout");
  require(theta.size() == layout.d(),
          "theta has " + std::to_string(theta.size()) + " entries, layout needs " +
              std::to_string(layout.d()));
  require(sigma > 0.0 && std::isfinite(sigma), "policy sigma must be positive");
  require(theta.allFinite(), "policy parameters not finite",
          ErrorKind::NumericalDivergence);
}

Vector FactoredPolicy::theta() const {
  require(L.cols() == s.size(), "dictionary/coefficient shape mismatch");
  Vector t = L * s;
  if (epsilon) {
    require(epsilon->size() == L.rows(), "epsilon length does not match dictionary rows");
    t += *epsilon;
  }
  return t;
}

PolicyParams compose_policy(const Matrix& L, const Vector& s,
                            const std::optional<Vector>& epsilon, double sigma,
                            const PolicyLayout& layout) {
  require(L.rows() == layout.d(), "dictionary rows do not match policy dimension");
  FactoredPolicy f{L, s, epsilon, sigma};
  return PolicyParams(layout, f.theta(), sigma);
}

ActionSample sample_action(const PolicyParams& p, const Vector& features, Rng& rng) {
  Vector mu = p.mean(features);
  Vector z = randn(mu.size(), rng);
  ActionSample out;
  out.action = mu + p.sigma * z;
  // Same density as log_prob(p, features, action), without recomputing the mean.
  out.log_prob = -0.5 * z.squaredNorm() -
                 static_cast<double>(mu.size()) * (std::log(p.sigma) + 0.5 * kLog2Pi);
  return out;
}

double log_prob(const PolicyParams& p, const Vector& features, const Vector& action) {
  require(action.size() == p.layout.action_dim, "action length mismatch");
  Vector r = (action - p.mean(features)) / p.sigma;
  return -0.5 * r.squaredNorm() -
         static_cast<double>(action.size()) * (std::log(p.sigma) + 0.5 * kLog2Pi);
}

Vector grad_log_prob(const PolicyParams& p, const Vector& features,
                     const Vector& action) {
  require(action.size() == p.layout.action_dim, "action length mismatch");
  const Vector r = (action - p.mean(features)) / (p.sigma * p.sigma);
  const int f = p.layout.feature_dim;
  Vector g(p.layout.d());
  for (int j = 0; j < p.layout.action_dim; ++j) g.segment(j * f, f) = r[j] * features;
  return g;
}

double grad_log_sigma(const PolicyParams& p, const Vector& features,
                      const Vector& action) {
  Vector r = (action - p.mean(features)) / p.sigma;
  return r.squaredNorm() - static_cast<double>(action.size());
}

}  // namespace lpgftw
