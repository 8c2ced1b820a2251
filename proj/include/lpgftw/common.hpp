#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace lpgftw {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Rng = std::mt19937_64;

enum class ErrorKind {
  InvalidArgument,
  DegenerateTaskFamily,
  NumericalDivergence,
  UnstabilizableInstance,
  NoStepTaken,
  IllConditionedConsolidation,
  DoubleIncorporation,
  NotIncorporated,
  Config,
  Io,
};

/// All library failures surface as this exception; `kind()` lets callers
/// branch without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline void require(bool cond, const std::string& what,
                    ErrorKind kind = ErrorKind::InvalidArgument) {
  if (!cond) throw Error(kind, what);
}

/// Vector of i.i.d. standard normal draws.
inline Vector randn(Eigen::Index n, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = dist(rng);
  return v;
}

/// Derive an independent child seed from a generator (advances it by one).
inline std::uint64_t child_seed(Rng& rng) { return rng(); }

/// splitmix64 finalizer; used to mix (seed, index) pairs into stream seeds.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline bool all_finite(const Vector& v) { return v.allFinite(); }

/// Largest eigenvalue of a symmetric matrix.
double max_sym_eigenvalue(const Matrix& m);
/// Smallest eigenvalue of a symmetric matrix.
double min_sym_eigenvalue(const Matrix& m);

}  // namespace lpgftw
