#include "mbsgd/oracle.hpp"

#include "oracle_kernels.hpp"

#include <cmath>

namespace mbsgd::serial {
namespace {

double walk(const detail::ErrorKernel& kernel, const std::vector<double>& delta, std::int64_t remaining,
            std::int64_t batches, std::int64_t m) {
  if (remaining == 0) return detail::squared_norm(delta.data(), delta.size());
  std::vector<double> next(delta.size()), grad(delta.size());
  std::vector<Eigen::Index> digits(static_cast<std::size_t>(m));
  double sum = 0.0;
  for (std::int64_t code = 0; code < batches; ++code) {
    detail::decode_tuple(code, kernel.n, m, digits.data());
    kernel.step(delta.data(), next.data(), grad.data(),
                [&](std::int64_t s) { return digits[static_cast<std::size_t>(s)]; });
    sum += walk(kernel, next, remaining - 1, batches, m);
  }
  return sum;
}

}  // namespace

double enumerate_expected_error(const QuadraticProblem& problem, std::int64_t m, double eta,
                                const Eigen::MatrixXd& delta0, std::int64_t t) {
  detail::check_oracle_args(m, eta, t);
  const std::int64_t total = detail::checked_count(problem.samples(), m * t, kEnumerationBudget);
  const std::int64_t batches = detail::checked_count(problem.samples(), m, kEnumerationBudget);
  const detail::ErrorKernel kernel(problem, m, eta);
  return walk(kernel, detail::flatten(problem, delta0), t, batches, m) / static_cast<double>(total);
}

McEstimate mc_expected_error(const QuadraticProblem& problem, std::int64_t m, double eta,
                             const Eigen::MatrixXd& delta0, std::int64_t t, std::int64_t trials, std::uint64_t seed) {
  detail::check_oracle_args(m, eta, t);
  if (trials < 2) throw InputError("Monte-Carlo estimates need at least 2 trials");
  const std::vector<double> start = detail::flatten(problem, delta0);
  const detail::ErrorKernel kernel(problem, m, eta);
  McEstimate est;
  est.trials = trials;
  est.seed = seed;
  double mean = 0.0, m2 = 0.0;
  for (std::int64_t j = 0; j < trials; ++j) {
    const double v = detail::run_trial(kernel, start, t, derive_seed(seed, static_cast<std::uint64_t>(j)));
    if (!std::isfinite(v)) ++est.diverged;
    const double delta = v - mean;
    mean += delta / static_cast<double>(j + 1);
    m2 += delta * (v - mean);
  }
  est.mean = mean;
  est.flagged = 2 * est.diverged > trials;
  est.stderr_mean = std::isfinite(mean) ? std::sqrt(m2 / static_cast<double>(trials - 1) / static_cast<double>(trials))
                                        : INFINITY;
  return est;
}

}  // namespace mbsgd::serial
