#include "lpgftw/mlp_policy.hpp"

#include <cmath>
#include <numbers>

namespace lpgftw {

namespace {

struct Views {
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> W1;
  Eigen::Map<const Vector> b1;
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> W2;
  Eigen::Map<const Vector> b2;
};

Views views(const MlpLayout& l, const Vector& theta) {
  const double* p = theta.data();
  const int n1 = l.hidden * l.input_dim;
  const int n2 = l.action_dim * l.hidden;
  return {{p, l.hidden, l.input_dim},
          {p + n1, l.hidden},
          {p + n1 + l.hidden, l.action_dim, l.hidden},
          {p + n1 + l.hidden + n2, l.action_dim}};
}

}  // namespace

MlpPolicy MlpPolicy::random(MlpLayout layout, double sigma, double scale, Rng& rng) {
  require(layout.input_dim >= 1 && layout.hidden >= 1 && layout.action_dim >= 1,
          "MLP dimensions must be positive");
  require(sigma > 0.0, "sigma must be positive");
  MlpPolicy p{layout, Vector::Zero(layout.d()), sigma};
  const int n1 = layout.hidden * layout.input_dim;
  const int n2 = layout.action_dim * layout.hidden;
  p.theta.head(n1) = randn(n1, rng) * (scale / std::sqrt(static_cast<double>(layout.input_dim)));
  p.theta.segment(n1 + layout.hidden, n2) =
      randn(n2, rng) * (scale / std::sqrt(static_cast<double>(layout.hidden)));
  return p;
}

Vector MlpPolicy::mean(const Vector& x) const {
  require(theta.size() == layout.d(), "MLP theta has the wrong size");
  require(x.size() == layout.input_dim, "MLP input has the wrong size");
  const Views v = views(layout, theta);
  const Vector h = (v.W1 * x + v.b1).array().tanh().matrix();
  return v.W2 * h + v.b2;
}

Vector MlpPolicy::sample(const Vector& x, Rng& rng) const {
  return mean(x) + sigma * randn(layout.action_dim, rng);
}

double MlpPolicy::log_prob(const Vector& x, const Vector& u) const {
  const Vector z = (u - mean(x)) / sigma;
  return -0.5 * z.squaredNorm() -
         layout.action_dim * (std::log(sigma) + 0.5 * std::log(2.0 * std::numbers::pi));
}

Vector MlpPolicy::grad_log_prob(const Vector& x, const Vector& u) const {
  require(theta.size() == layout.d(), "MLP theta has the wrong size");
  const Views v = views(layout, theta);
  const Vector h = (v.W1 * x + v.b1).array().tanh().matrix();
  const Vector delta_out = (u - (v.W2 * h + v.b2)) / (sigma * sigma);  // d/dmean
  const Vector delta_h =
      ((v.W2.transpose() * delta_out).array() * (1.0 - h.array().square())).matrix();

  Vector g(layout.d());
  const int n1 = layout.hidden * layout.input_dim;
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      g.data(), layout.hidden, layout.input_dim) = delta_h * x.transpose();
  g.segment(n1, layout.hidden) = delta_h;
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      g.data() + n1 + layout.hidden, layout.action_dim, layout.hidden) = delta_out * h.transpose();
  g.tail(layout.action_dim) = delta_out;
  return g;
}

}  // namespace lpgftw
