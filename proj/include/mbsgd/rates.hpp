#pragma once

// Closed-form step sizes and contraction rates of constant-step mini-batch SGD under
// interpolation, as functions of the batch size m.
//
// Batch sizes are real numbers here: the case splits fall at non-integer m. Rates are
// exposed both as g and as the decrement 1 - g; the decrement keeps full relative
// precision when g is within a few ulps of 1 (lambda_k / beta ~ 1e-8 and below).

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace mbsgd {

/// Spectral constants of a quadratic problem: beta >= max ||x_i||^2 and the extreme nonzero
/// eigenvalues of H. `samples` (n) is only needed by the lambda_k-free step size.
class QuadraticRateParams {
 public:
  /// Requires 0 < lambdak <= lambda1 < beta, or lambdak == lambda1 <= beta. samples >= 0 (0 = unknown).
  QuadraticRateParams(double beta, double lambda1, double lambdak, std::int64_t samples = 0);

  double beta() const noexcept { return beta_; }
  double lambda1() const noexcept { return lambda1_; }
  double lambdak() const noexcept { return lambdak_; }
  std::int64_t samples() const noexcept { return samples_; }
  bool flat() const noexcept { return lambda1_ == lambdak_; }

 private:
  double beta_;
  double lambda1_;
  double lambdak_;
  std::int64_t samples_;
};

/// Smoothness constants of a general convex interpolated problem: per-sample smoothness beta,
/// smoothness lambda and strong convexity alpha of the empirical loss.
class ConvexRateParams {
 public:
  /// Requires beta >= lambda >= alpha > 0.
  ConvexRateParams(double beta, double lambda, double alpha);

  double beta() const noexcept { return beta_; }
  double lambda() const noexcept { return lambda_; }
  double alpha() const noexcept { return alpha_; }

 private:
  double beta_;
  double lambda_;
  double alpha_;
};

// ---- general smooth convex case ----

/// m / (beta + lambda (m - 1))
double convex_step_size(double m, const ConvexRateParams& p);
/// Per-iteration contraction 1 - eta(m) alpha of E||w_t - w*||^2.
double convex_rate(double m, const ConvexRateParams& p);
/// Approximate iteration speedup t(1)/t(m) = eta(m)/eta(1) = m beta / (beta + lambda (m - 1)).
double convex_speedup(double m, const ConvexRateParams& p);
/// Exact log-ratio log(1 - eta(m) alpha) / log(1 - eta(1) alpha). Requires alpha < beta.
double convex_speedup_exact(double m, const ConvexRateParams& p);

// ---- quadratic case ----

/// Per-eigendirection contraction (1 - eta lambda)^2 + (eta^2 lambda / m)(beta - lambda).
double g_lambda(double lambda, double m, double eta, double beta);

/// Step size above which the lambda_1 direction dominates the worst-case contraction.
double eta0(double m, const QuadraticRateParams& p);
/// Convergence boundary 2m / (beta + (m - 1) lambda_1).
double eta1(double m, const QuadraticRateParams& p);

/// max over lambda in [lambda_k, lambda_1] of g_lambda. Requires 0 < eta < eta1(m);
/// throws NonConvergentError for eta >= eta1(m).
double g_max(double m, double eta, const QuadraticRateParams& p);

/// beta / (lambda_1 - lambda_k) + 1; +infinity for a flat spectrum.
double branch_point(const QuadraticRateParams& p);

/// Step size minimizing g_max(m, .).
double optimal_step(double m, const QuadraticRateParams& p);
/// g*(m) = g_max(m, optimal_step(m)).
double optimal_rate(double m, const QuadraticRateParams& p);
/// 1 - g*(m)
double optimal_rate_decrement(double m, const QuadraticRateParams& p);

/// First-branch formula 1 - m lambda_k / (beta + (m-1) lambda_k), extended to all m >= 1.
double first_branch_rate(double m, const QuadraticRateParams& p);
double first_branch_decrement(double m, const QuadraticRateParams& p);
/// Second-branch formula 1 - 4 m (m-1) lambda_1 lambda_k / (beta + (m-1)(lambda_1 + lambda_k))^2, all m >= 1.
double second_branch_rate(double m, const QuadraticRateParams& p);
double second_branch_decrement(double m, const QuadraticRateParams& p);

/// True when lambda_k / beta <= 1/n, the regime in which hat_rate bounds g_max(m, hat_step(m)).
bool hat_assumption_holds(const QuadraticRateParams& p);
/// lambda_k-free step size. Requires samples() > 0 and lambda_1 > beta / n (InputError otherwise).
double hat_step(double m, const QuadraticRateParams& p);
double hat_rate(double m, const QuadraticRateParams& p);
double hat_rate_decrement(double m, const QuadraticRateParams& p);
/// beta / (lambda_1 - beta/n) + 1
double hat_branch_point(const QuadraticRateParams& p);

/// s(m) with g*(m) = 1 - (lambda_k / beta) s(m).
double speedup_s(double m, const QuadraticRateParams& p);
/// lim_{m -> inf} s(m) = 4 lambda_1 beta / (lambda_1 + lambda_k)^2 (infinity for a flat spectrum).
double speedup_limit(const QuadraticRateParams& p);

struct CriticalBatch {
  bool unbounded = false;  // flat spectrum: linear scaling for every m
  double value = 0.0;      // beta / (lambda_1 - lambda_k) + 1
  std::int64_t recommended = 0;  // round(value)
};

CriticalBatch critical_batch(const QuadraticRateParams& p);

enum class EfficiencyBasis { Optimal, Hat };

/// g*(m)^(1/m) (or hat_rate(m)^(1/m)): error contraction per gradient evaluation.
double efficiency(double m, const QuadraticRateParams& p, EfficiencyBasis basis = EfficiencyBasis::Optimal);
/// log of efficiency, computed from the decrement.
double log_efficiency(double m, const QuadraticRateParams& p, EfficiencyBasis basis = EfficiencyBasis::Optimal);

/// Integer m in [1, m_max] minimizing efficiency, ties to the smaller m. Exhaustive search.
std::int64_t best_batch(const QuadraticRateParams& p, std::int64_t m_max,
                        EfficiencyBasis basis = EfficiencyBasis::Optimal);

/// ceil(ln(eps / l0) / ln(g)), at least 1. Throws NonConvergentError for g >= 1.
std::int64_t iterations_to_target(double g, double l0, double eps);

enum class Regime { LinearScaling, Saturation };

const char* to_string(Regime r) noexcept;

struct RatePoint {
  std::int64_t m = 1;
  double eta_star = 0.0;
  double g_star = 0.0;
  std::optional<double> eta_hat;  // absent when the lambda_k-free step is undefined for p
  std::optional<double> g_hat;
  double speedup = 0.0;
  double efficiency = 0.0;
  Regime regime = Regime::LinearScaling;
};

/// One row per batch size; grid entries must be distinct and >= 1.
std::vector<RatePoint> rate_table(std::span<const std::int64_t> m_grid, const QuadraticRateParams& p);

}  // namespace mbsgd
