#pragma once

#include "mbsgd/engine.hpp"
#include "mbsgd/problems.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <span>
#include <vector>

namespace mbsgd {

/// Largest number of index sequences the enumeration oracles will visit.
inline constexpr double kEnumerationBudget = 1e7;
/// Largest number of batches the E[H_m^2] and mini-batch gradient-norm enumerations will visit.
inline constexpr double kTupleBudget = 1e6;

/// M_t = E[delta_t delta_t^T] (summed over output columns).
struct MomentState {
  Eigen::MatrixXd moment;
  std::int64_t iteration = 0;

  double trace() const { return moment.trace(); }
};

MomentState initial_moment(const Eigen::MatrixXd& delta0);

/// One step of the exact second-moment recursion for i.i.d. with-replacement batches:
/// M' = M - eta (HM + MH) + eta^2 [ (1/m)(1/n) sum_i (x_i^T M x_i) x_i x_i^T + ((m-1)/m) HMH ].
MomentState exact_moment_step(const MomentState& state, const QuadraticProblem& problem, double m, double eta);

/// tr(P M P) with P the projection onto Range(H): E||P delta||^2.
double range_trace(const MomentState& state, const SpectralSummary& spectral);
/// tr(H M) = E L(w).
double moment_loss(const MomentState& state, const Covariance& h);

/// Trajectory of the recursion: entry t holds the state after t steps, t = 0..steps.
std::vector<MomentState> moment_trajectory(const QuadraticProblem& problem, double m, double eta,
                                           const Eigen::MatrixXd& delta0, std::int64_t steps);

/// n^(m t) ordered index sequences weighted equally; throws BudgetError above kEnumerationBudget.
/// Parallel over first-step batches, reduced in a fixed order.
double enumerate_expected_error(const QuadraticProblem& problem, std::int64_t m, double eta,
                                const Eigen::MatrixXd& delta0, std::int64_t t);

struct McEstimate {
  double mean = 0.0;
  double stderr_mean = 0.0;
  std::int64_t trials = 0;
  std::uint64_t seed = 0;
  /// Trials whose error became non-finite or exceeded 1e12 times the initial error.
  std::int64_t diverged = 0;
  /// Set when a majority of trials diverged.
  bool flagged = false;
};

/// Monte-Carlo estimate of E||delta_t||^2. Trial j samples with CounterRng(derive_seed(seed, j)).
McEstimate mc_expected_error(const QuadraticProblem& problem, std::int64_t m, double eta,
                             const Eigen::MatrixXd& delta0, std::int64_t t, std::int64_t trials, std::uint64_t seed);

/// Mean loss curve of independent engine runs; trial j uses rng_seed = derive_seed(seed, j).
/// The config's target loss is ignored. Records missing after a divergence count as +inf.
struct McCurve {
  std::vector<std::int64_t> iterations;
  std::vector<McEstimate> points;
  std::int64_t diverged_runs = 0;
};
McCurve mc_loss_curve(const QuadraticProblem& problem, const SGDConfig& config, std::int64_t trials,
                      std::uint64_t seed);
McCurve mc_loss_curve(const ConvexProblem& problem, const SGDConfig& config, std::int64_t trials,
                      std::uint64_t seed);

/// E||grad L_m(w)||^2 (lhs) against (1/m) E||grad L_1(w)||^2 + ((m-1)/m) ||grad L(w)||^2 (rhs).
struct MbNormCheck {
  double lhs = 0.0;
  double rhs = 0.0;
  double gap = 0.0;
  /// Zero in exact mode.
  double lhs_stderr = 0.0;
  bool exact = true;
};
/// Exact enumeration over all n^m batches; BudgetError above kTupleBudget.
MbNormCheck check_mb_norm_identity(const ConvexProblem& problem, std::span<const double> w, std::int64_t m);
MbNormCheck check_mb_norm_identity_mc(const ConvexProblem& problem, std::span<const double> w, std::int64_t m,
                                      std::int64_t trials, std::uint64_t seed);

struct Hm2Check {
  Eigen::MatrixXd exact;
  Eigen::MatrixXd closed_form;
  /// max entrywise |exact - closed_form|
  double max_gap = 0.0;
  /// min eigenvalue of (beta/m) H + ((m-1)/m) H^2 - E[H_m^2]
  double bound_min_eigenvalue = 0.0;
};
Hm2Check check_hm2_expansion(const QuadraticProblem& problem, std::int64_t m);

namespace serial {

/// Straight recursive enumeration, no threads, sequential summation.
double enumerate_expected_error(const QuadraticProblem& problem, std::int64_t m, double eta,
                                const Eigen::MatrixXd& delta0, std::int64_t t);

/// Same trials as the parallel estimator, accumulated with Welford's update.
McEstimate mc_expected_error(const QuadraticProblem& problem, std::int64_t m, double eta,
                             const Eigen::MatrixXd& delta0, std::int64_t t, std::int64_t trials, std::uint64_t seed);

}  // namespace serial
}  // namespace mbsgd
