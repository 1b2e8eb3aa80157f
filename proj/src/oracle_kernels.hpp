#pragma once

#include "mbsgd/error.hpp"
#include "mbsgd/problems.hpp"
#include "mbsgd/rng.hpp"

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

namespace mbsgd::detail {

/// Flat row-major copy of the data plus a row-major d x c error, the layout every oracle kernel uses.
struct ErrorKernel {
  const double* x;
  Eigen::Index n;
  Eigen::Index d;
  Eigen::Index c;
  double scale;  // eta / m
  std::int64_t m;

  ErrorKernel(const QuadraticProblem& p, std::int64_t batch, double eta)
      : x(p.data().matrix().data()), n(p.samples()), d(p.dim()), c(p.outputs()),
        scale(eta / static_cast<double>(batch)), m(batch) {}

  std::size_t size() const { return static_cast<std::size_t>(d * c); }

  /// out = delta - scale * sum_s x_s (x_s^T delta), with grad as scratch.
  template <class IndexOf>
  void step(const double* delta, double* out, double* grad, IndexOf&& index_of) const {
    const std::size_t len = size();
    for (std::size_t j = 0; j < len; ++j) grad[j] = 0.0;
    for (std::int64_t s = 0; s < m; ++s) {
      const double* xi = x + index_of(s) * d;
      for (Eigen::Index k = 0; k < c; ++k) {
        double r = 0.0;
        for (Eigen::Index j = 0; j < d; ++j) r += xi[j] * delta[j * c + k];
        for (Eigen::Index j = 0; j < d; ++j) grad[j * c + k] += r * xi[j];
      }
    }
    for (std::size_t j = 0; j < len; ++j) out[j] = delta[j] - scale * grad[j];
  }
};

inline double squared_norm(const double* v, std::size_t len) {
  double s = 0.0;
  for (std::size_t j = 0; j < len; ++j) s += v[j] * v[j];
  return s;
}

inline std::vector<double> flatten(const QuadraticProblem& p, const Eigen::MatrixXd& delta0) {
  if (delta0.rows() != p.dim() || delta0.cols() != p.outputs())
    throw DimensionError("initial error must be d x outputs");
  std::vector<double> out(static_cast<std::size_t>(delta0.size()));
  for (Eigen::Index j = 0; j < delta0.rows(); ++j)
    for (Eigen::Index k = 0; k < delta0.cols(); ++k) out[static_cast<std::size_t>(j * delta0.cols() + k)] = delta0(j, k);
  return out;
}

/// n^exponent, or throws BudgetError when it exceeds the budget.
inline std::int64_t checked_count(Eigen::Index n, std::int64_t exponent, double budget) {
  if (exponent < 0) throw InputError("negative enumeration depth");
  double count = 1.0;
  for (std::int64_t i = 0; i < exponent; ++i) {
    count *= static_cast<double>(n);
    if (count > budget)
      throw BudgetError("enumeration needs " + std::to_string(n) + "^" + std::to_string(exponent) +
                        " sequences, above the budget of " + std::to_string(static_cast<long long>(budget)));
  }
  return static_cast<std::int64_t>(count);
}

/// Decodes `code` into m base-n digits, most significant first (lexicographic tuple order).
inline void decode_tuple(std::int64_t code, Eigen::Index n, std::int64_t m, Eigen::Index* digits) {
  for (std::int64_t s = m - 1; s >= 0; --s) {
    digits[s] = static_cast<Eigen::Index>(code % n);
    code /= n;
  }
}

inline void check_oracle_args(std::int64_t m, double eta, std::int64_t t) {
  if (m < 1) throw InputError("batch size must be >= 1");
  if (!(eta >= 0.0) || !std::isfinite(eta)) throw InputError("step size must be finite and non-negative");
  if (t < 0) throw InputError("iteration count must be >= 0");
}

/// ||delta_t||^2 of one seeded run; +inf once the error leaves 1e12 ||delta_0||^2 or goes non-finite.
inline double run_trial(const ErrorKernel& kernel, const std::vector<double>& delta0, std::int64_t t,
                        std::uint64_t trial_seed) {
  const CounterRng rng(trial_seed);
  const std::size_t len = kernel.size();
  std::vector<double> a(delta0), b(len), grad(len);
  const double limit = 1e12 * squared_norm(delta0.data(), len);
  for (std::int64_t it = 0; it < t; ++it) {
    kernel.step(a.data(), b.data(), grad.data(), [&](std::int64_t s) {
      return static_cast<Eigen::Index>(rng.index(static_cast<std::uint64_t>(it), static_cast<std::uint64_t>(s),
                                                 static_cast<std::uint64_t>(kernel.n)));
    });
    a.swap(b);
    const double e = squared_norm(a.data(), len);
    if (!std::isfinite(e) || e > limit) return std::numeric_limits<double>::infinity();
  }
  return squared_norm(a.data(), len);
}

}  // namespace mbsgd::detail
