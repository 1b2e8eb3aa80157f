#include "mbsgd/oracle.hpp"

#include "mbsgd/error.hpp"
#include "mbsgd/parallel.hpp"
#include "mbsgd/rng.hpp"
#include "oracle_kernels.hpp"
#include "parallel_for.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>

namespace mbsgd {
namespace {

McEstimate summarize(std::span<const double> values, std::uint64_t seed) {
  McEstimate est;
  est.trials = static_cast<std::int64_t>(values.size());
  est.seed = seed;
  est.diverged = std::count_if(values.begin(), values.end(), [](double v) { return !std::isfinite(v); });
  est.flagged = 2 * est.diverged > est.trials;
  const auto count = static_cast<double>(values.size());
  est.mean = pairwise_sum(values) / count;
  if (!std::isfinite(est.mean)) {
    est.stderr_mean = std::numeric_limits<double>::infinity();
    return est;
  }
  std::vector<double> sq(values.size());
  std::transform(values.begin(), values.end(), sq.begin(), [&](double v) { return (v - est.mean) * (v - est.mean); });
  est.stderr_mean = std::sqrt(pairwise_sum(sq) / (count - 1.0) / count);
  return est;
}

template <class Problem>
McCurve loss_curve(const Problem& problem, const SGDConfig& config, std::int64_t trials, std::uint64_t seed) {
  if (trials < 2) throw InputError("Monte-Carlo estimates need at least 2 trials");
  std::vector<Trace> traces(static_cast<std::size_t>(trials));
  detail::parallel_for(trials, [&](std::int64_t j) {
    SGDConfig c = config;
    c.target_loss.reset();
    c.rng_seed = derive_seed(seed, static_cast<std::uint64_t>(j));
    if constexpr (std::is_same_v<Problem, QuadraticProblem>)
      traces[static_cast<std::size_t>(j)] = sgd_run_quadratic(problem, c);
    else
      traces[static_cast<std::size_t>(j)] = sgd_run_convex(problem, c);
  });

  McCurve curve;
  const Trace* longest = &traces.front();
  for (const auto& t : traces) {
    if (t.records.size() > longest->records.size()) longest = &t;
    if (t.status == RunStatus::Diverged) ++curve.diverged_runs;
  }
  std::vector<double> values(traces.size());
  for (std::size_t r = 0; r < longest->records.size(); ++r) {
    for (std::size_t j = 0; j < traces.size(); ++j)
      values[j] = r < traces[j].records.size() ? traces[j].records[r].loss : std::numeric_limits<double>::infinity();
    curve.iterations.push_back(longest->records[r].iteration);
    curve.points.push_back(summarize(values, seed));
  }
  return curve;
}

std::vector<Eigen::VectorXd> sample_gradients(const ConvexProblem& problem, std::span<const double> w) {
  if (static_cast<Eigen::Index>(w.size()) != problem.dim()) throw DimensionError("w has the wrong dimension");
  std::vector<Eigen::VectorXd> grads(static_cast<std::size_t>(problem.samples()));
  for (Eigen::Index i = 0; i < problem.samples(); ++i) {
    auto& g = grads[static_cast<std::size_t>(i)];
    g = Eigen::VectorXd::Zero(problem.dim());
    problem.add_gradient(i, w, std::span<double>(g.data(), static_cast<std::size_t>(g.size())));
  }
  return grads;
}

double mb_norm_rhs(const std::vector<Eigen::VectorXd>& grads, std::int64_t m) {
  const auto n = static_cast<double>(grads.size());
  const auto mm = static_cast<double>(m);
  double single = 0.0;
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(grads.front().size());
  for (const auto& g : grads) {
    single += g.squaredNorm();
    mean += g;
  }
  mean /= n;
  return single / n / mm + (mm - 1.0) / mm * mean.squaredNorm();
}

}  // namespace

MomentState initial_moment(const Eigen::MatrixXd& delta0) {
  if (!delta0.allFinite()) throw InputError("initial error must be finite");
  return MomentState{delta0 * delta0.transpose(), 0};
}

MomentState exact_moment_step(const MomentState& state, const QuadraticProblem& problem, double m, double eta) {
  if (!(m >= 1.0)) throw InputError("batch size must be >= 1");
  if (!(eta >= 0.0) || !std::isfinite(eta)) throw InputError("step size must be finite and non-negative");
  const Eigen::MatrixXd& mom = state.moment;
  if (mom.rows() != problem.dim() || mom.cols() != problem.dim()) throw DimensionError("moment must be d x d");
  const Eigen::MatrixXd& h = problem.covariance().matrix();
  const RowMatrix& x = problem.data().matrix();
  const auto n = static_cast<double>(problem.samples());

  const Eigen::MatrixXd hm = h * mom;
  const Eigen::MatrixXd xm = x * mom;
  const Eigen::VectorXd quad = (xm.array() * x.array()).rowwise().sum();
  const Eigen::MatrixXd single = x.transpose() * quad.asDiagonal() * x / n;

  Eigen::MatrixXd next = mom - eta * (hm + hm.transpose()) +
                         eta * eta * (single / m + (m - 1.0) / m * (hm * h));
  next = 0.5 * (next + next.transpose()).eval();
  return MomentState{std::move(next), state.iteration + 1};
}

double range_trace(const MomentState& state, const SpectralSummary& spectral) {
  const Eigen::MatrixXd& e = spectral.eigenbasis;
  if (state.moment.rows() != e.rows()) throw DimensionError("moment and eigenbasis disagree");
  return (e.transpose() * state.moment * e).trace();
}

double moment_loss(const MomentState& state, const Covariance& h) {
  if (state.moment.rows() != h.dim()) throw DimensionError("moment and covariance disagree");
  return (h.matrix().cwiseProduct(state.moment)).sum();
}

std::vector<MomentState> moment_trajectory(const QuadraticProblem& problem, double m, double eta,
                                           const Eigen::MatrixXd& delta0, std::int64_t steps) {
  if (steps < 0) throw InputError("steps must be >= 0");
  if (delta0.rows() != problem.dim()) throw DimensionError("initial error must have d rows");
  std::vector<MomentState> out;
  out.reserve(static_cast<std::size_t>(steps + 1));
  out.push_back(initial_moment(delta0));
  for (std::int64_t t = 0; t < steps; ++t) out.push_back(exact_moment_step(out.back(), problem, m, eta));
  return out;
}

double enumerate_expected_error(const QuadraticProblem& problem, std::int64_t m, double eta,
                                const Eigen::MatrixXd& delta0, std::int64_t t) {
  detail::check_oracle_args(m, eta, t);
  const std::int64_t total = detail::checked_count(problem.samples(), m * t, kEnumerationBudget);
  const std::vector<double> start = detail::flatten(problem, delta0);
  if (t == 0) return detail::squared_norm(start.data(), start.size());

  const detail::ErrorKernel kernel(problem, m, eta);
  const std::int64_t batches = detail::checked_count(problem.samples(), m, kEnumerationBudget);
  const std::size_t len = kernel.size();

  // Depth-first walk below each first-step batch; level[k] holds the error after k steps.
  std::vector<double> partial(static_cast<std::size_t>(batches));
  detail::parallel_for(batches, [&](std::int64_t first) {
    std::vector<std::vector<double>> level(static_cast<std::size_t>(t) + 1, std::vector<double>(len));
    std::vector<double> grad(len);
    std::vector<Eigen::Index> digits(static_cast<std::size_t>(m));
    level[0] = start;
    auto apply = [&](std::int64_t code, std::size_t depth) {
      detail::decode_tuple(code, kernel.n, m, digits.data());
      kernel.step(level[depth].data(), level[depth + 1].data(), grad.data(),
                  [&](std::int64_t s) { return digits[static_cast<std::size_t>(s)]; });
    };
    const auto leaf = static_cast<std::size_t>(t);
    auto walk = [&](auto&& self, std::size_t depth) -> double {
      if (depth == leaf) return detail::squared_norm(level[leaf].data(), len);
      double sum = 0.0;
      for (std::int64_t code = 0; code < batches; ++code) {
        apply(code, depth);
        sum += self(self, depth + 1);
      }
      return sum;
    };
    apply(first, 0);
    partial[static_cast<std::size_t>(first)] = walk(walk, 1);
  });
  return pairwise_sum(partial) / static_cast<double>(total);
}

McEstimate mc_expected_error(const QuadraticProblem& problem, std::int64_t m, double eta,
                             const Eigen::MatrixXd& delta0, std::int64_t t, std::int64_t trials, std::uint64_t seed) {
  detail::check_oracle_args(m, eta, t);
  if (trials < 2) throw InputError("Monte-Carlo estimates need at least 2 trials");
  const std::vector<double> start = detail::flatten(problem, delta0);
  const detail::ErrorKernel kernel(problem, m, eta);
  std::vector<double> values(static_cast<std::size_t>(trials));
  detail::parallel_for(trials, [&](std::int64_t j) {
    values[static_cast<std::size_t>(j)] =
        detail::run_trial(kernel, start, t, derive_seed(seed, static_cast<std::uint64_t>(j)));
  });
  return summarize(values, seed);
}

McCurve mc_loss_curve(const QuadraticProblem& problem, const SGDConfig& config, std::int64_t trials,
                      std::uint64_t seed) {
  return loss_curve(problem, config, trials, seed);
}

McCurve mc_loss_curve(const ConvexProblem& problem, const SGDConfig& config, std::int64_t trials,
                      std::uint64_t seed) {
  return loss_curve(problem, config, trials, seed);
}

MbNormCheck check_mb_norm_identity(const ConvexProblem& problem, std::span<const double> w, std::int64_t m) {
  if (m < 1) throw InputError("batch size must be >= 1");
  const Eigen::Index n = problem.samples();
  const std::int64_t total = detail::checked_count(n, m, kTupleBudget);
  const auto grads = sample_gradients(problem, w);
  std::vector<Eigen::Index> digits(static_cast<std::size_t>(m));
  std::vector<double> norms(static_cast<std::size_t>(total));
  Eigen::VectorXd acc(problem.dim());
  for (std::int64_t code = 0; code < total; ++code) {
    detail::decode_tuple(code, n, m, digits.data());
    acc.setZero();
    for (auto i : digits) acc += grads[static_cast<std::size_t>(i)];
    norms[static_cast<std::size_t>(code)] = (acc / static_cast<double>(m)).squaredNorm();
  }
  MbNormCheck out;
  out.lhs = pairwise_sum(norms) / static_cast<double>(total);
  out.rhs = mb_norm_rhs(grads, m);
  out.gap = std::abs(out.lhs - out.rhs);
  return out;
}

MbNormCheck check_mb_norm_identity_mc(const ConvexProblem& problem, std::span<const double> w, std::int64_t m,
                                      std::int64_t trials, std::uint64_t seed) {
  if (m < 1) throw InputError("batch size must be >= 1");
  if (trials < 2) throw InputError("Monte-Carlo estimates need at least 2 trials");
  const auto grads = sample_gradients(problem, w);
  const CounterRng rng(seed);
  const auto n = static_cast<std::uint64_t>(problem.samples());
  std::vector<double> norms(static_cast<std::size_t>(trials));
  detail::parallel_for(trials, [&](std::int64_t j) {
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(problem.dim());
    for (std::int64_t s = 0; s < m; ++s)
      acc += grads[rng.index(static_cast<std::uint64_t>(j), static_cast<std::uint64_t>(s), n)];
    norms[static_cast<std::size_t>(j)] = (acc / static_cast<double>(m)).squaredNorm();
  });
  const McEstimate est = summarize(norms, seed);
  MbNormCheck out;
  out.lhs = est.mean;
  out.lhs_stderr = est.stderr_mean;
  out.rhs = mb_norm_rhs(grads, m);
  out.gap = std::abs(out.lhs - out.rhs);
  out.exact = false;
  return out;
}

Hm2Check check_hm2_expansion(const QuadraticProblem& problem, std::int64_t m) {
  if (m < 1) throw InputError("batch size must be >= 1");
  const Eigen::Index n = problem.samples(), d = problem.dim();
  const std::int64_t total = detail::checked_count(n, m, kTupleBudget);
  const RowMatrix& x = problem.data().matrix();
  const Eigen::MatrixXd& h = problem.covariance().matrix();
  const auto mm = static_cast<double>(m);

  std::vector<Eigen::Index> digits(static_cast<std::size_t>(m));
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(d, d), hm(d, d);
  for (std::int64_t code = 0; code < total; ++code) {
    detail::decode_tuple(code, n, m, digits.data());
    hm.setZero();
    for (auto i : digits) hm.noalias() += x.row(i).transpose() * x.row(i);
    hm /= mm;
    acc.noalias() += hm * hm;
  }
  Hm2Check out;
  out.exact = acc / static_cast<double>(total);
  out.exact = 0.5 * (out.exact + out.exact.transpose()).eval();
  const Eigen::MatrixXd h2 = h * h;
  out.closed_form = expected_single_sample_square(problem.data()) / mm + (mm - 1.0) / mm * h2;
  out.closed_form = 0.5 * (out.closed_form + out.closed_form.transpose()).eval();
  out.max_gap = (out.exact - out.closed_form).cwiseAbs().maxCoeff();
  const Eigen::MatrixXd bound = problem.beta() / mm * h + (mm - 1.0) / mm * h2 - out.exact;
  out.bound_min_eigenvalue = min_eigenvalue(0.5 * (bound + bound.transpose()));
  return out;
}

}  // namespace mbsgd
