#pragma once

#include "lpgftw/common.hpp"

namespace lpgftw {

/// Two-layer tanh Gaussian policy, kept as a smoke-test configuration.
///
/// Flattened theta: W1 (hidden x input, row-major), b1, W2 (action x hidden,
/// row-major), b2. mean(x) = W2 tanh(W1 x + b1) + b2.
struct MlpLayout {
  int input_dim = 1;
  int hidden = 8;
  int action_dim = 1;

  int d() const { return hidden * input_dim + hidden + action_dim * hidden + action_dim; }
};

struct MlpPolicy {
  MlpLayout layout;
  Vector theta;
  double sigma = 1.0;

  /// Small Gaussian weights (scale / sqrt(fan_in)), zero biases.
  static MlpPolicy random(MlpLayout layout, double sigma, double scale, Rng& rng);

  Vector mean(const Vector& x) const;
  Vector sample(const Vector& x, Rng& rng) const;
  double log_prob(const Vector& x, const Vector& u) const;
  /// Backpropagated d log_prob / d theta.
  Vector grad_log_prob(const Vector& x, const Vector& u) const;
};

}  // namespace lpgftw
