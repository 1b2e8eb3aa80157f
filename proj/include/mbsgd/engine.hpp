#pragma once

#include "mbsgd/problems.hpp"
#include "mbsgd/rates.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <span>
#include <variant>
#include <vector>

namespace mbsgd {

struct ExplicitStep {
  double eta = 0.0;
};
/// eta*(m) from the quadratic rate calculus (convex problems: m / (beta + lambda (m-1))).
struct OptimalStep {};
/// multiplier * hat_step(m); quadratic problems only.
struct HatStep {
  double multiplier = 1.0;
};
using StepPolicy = std::variant<ExplicitStep, OptimalStep, HatStep>;

double resolve_step(const StepPolicy& policy, std::int64_t m, const QuadraticRateParams& params);
double resolve_step(const StepPolicy& policy, std::int64_t m, const ConvexRateParams& params);

/// delta_0 = w_0 - w* drawn from a seeded standard normal, by default projected onto Range(H).
struct GaussianStart {
  std::uint64_t seed = 0;
  bool range_only = true;
};
/// Either a generated or an explicit d x outputs initial error.
using InitialError = std::variant<GaussianStart, Eigen::MatrixXd>;

struct SGDConfig {
  std::int64_t batch_size = 1;
  StepPolicy step = OptimalStep{};
  std::int64_t max_iterations = 1000;
  std::optional<double> target_loss;
  std::uint64_t rng_seed = 0;
  std::int64_t trace_stride = 1;
  double divergence_factor = 1e12;
  /// Replace H_m by H (deterministic gradient descent).
  bool full_gradient = false;
  InitialError initial = GaussianStart{};
};

enum class RunStatus { ReachedTarget, ExhaustedBudget, Diverged };
const char* to_string(RunStatus s) noexcept;

struct TraceRecord {
  std::int64_t iteration = 0;
  double epoch = 0.0;       // iteration * m / n
  double loss = 0.0;        // quadratic: delta^T H delta; convex: (1/n) sum l_i
  double range_error = 0.0;  // ||P delta||^2 (NaN for convex runs)
  double null_error = 0.0;   // ||Q delta||^2 (NaN for convex runs)
};

struct Trace {
  std::vector<TraceRecord> records;
  RunStatus status = RunStatus::ExhaustedBudget;
  Eigen::MatrixXd final_parameters;
  double step_size = 0.0;
  std::int64_t batch_size = 1;
  std::int64_t samples = 1;
};

/// The d x outputs matrix delta_0 a config starts from.
Eigen::MatrixXd initial_error(const QuadraticProblem& problem, const InitialError& init);

/// Mini-batch SGD w <- w - (eta/m) sum_{i in batch} (x_i . w - y_i) x_i with indices drawn
/// uniformly with replacement from CounterRng(rng_seed) at (iteration, slot). Records every
/// trace_stride iterations plus the last one. Divergence (loss above divergence_factor times
/// the initial loss, or non-finite values) ends the run with status Diverged.
Trace sgd_run_quadratic(const QuadraticProblem& problem, const SGDConfig& config);

/// Same sampling and update order for general per-sample losses. The initial point is
/// w* + delta_0 with delta_0 explicit (d x 1) or raw Gaussian.
Trace sgd_run_convex(const ConvexProblem& problem, const SGDConfig& config);

/// Mean and standard error across traces at each recorded iteration of their common prefix.
/// Throws InputError when the traces' recorded iterations disagree.
struct CurvePoint {
  std::int64_t iteration = 0;
  double epoch = 0.0;
  double mean_loss = 0.0;
  double stderr_loss = 0.0;
};
std::vector<CurvePoint> aggregate_traces(std::span<const Trace> traces);

/// Smallest recorded iteration at which the mean loss across traces is <= eps, or nullopt.
std::optional<std::int64_t> empirical_iterations(std::span<const Trace> traces, double eps);

}  // namespace mbsgd
