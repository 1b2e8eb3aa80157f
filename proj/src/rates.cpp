#include "mbsgd/rates.hpp"

#include "mbsgd/error.hpp"

#include <cmath>
#include <limits>
#include <set>
#include <string>

namespace mbsgd {
namespace {

void require_batch(double m) {
  if (!(m >= 1.0) || !std::isfinite(m)) throw InputError("batch size must be a finite number >= 1");
}

double sq(double x) { return x * x; }

}  // namespace

QuadraticRateParams::QuadraticRateParams(double beta, double lambda1, double lambdak, std::int64_t samples)
    : beta_(beta), lambda1_(lambda1), lambdak_(lambdak), samples_(samples) {
  if (!std::isfinite(beta) || !std::isfinite(lambda1) || !std::isfinite(lambdak))
    throw InputError("rate parameters must be finite");
  if (!(lambdak > 0.0)) throw InputError("lambda_k must be positive");
  if (!(lambdak <= lambda1)) throw InputError("lambda_k must not exceed lambda_1");
  const bool strict = lambda1 < beta;
  const bool flat_edge = lambdak == lambda1 && lambda1 <= beta;
  if (!strict && !flat_edge) throw InputError("need lambda_1 < beta (or a flat spectrum with lambda_1 <= beta)");
  if (samples < 0) throw InputError("sample count must be non-negative");
}

ConvexRateParams::ConvexRateParams(double beta, double lambda, double alpha)
    : beta_(beta), lambda_(lambda), alpha_(alpha) {
  if (!std::isfinite(beta) || !std::isfinite(lambda) || !std::isfinite(alpha))
    throw InputError("convex constants must be finite");
  if (!(alpha > 0.0 && lambda >= alpha && beta >= lambda))
    throw InputError("convex constants need beta >= lambda >= alpha > 0");
}

double convex_step_size(double m, const ConvexRateParams& p) {
  require_batch(m);
  return m / (p.beta() + p.lambda() * (m - 1.0));
}

double convex_rate(double m, const ConvexRateParams& p) {
  const double r = 1.0 - convex_step_size(m, p) * p.alpha();
  if (!(r >= 0.0 && r < 1.0)) throw InvariantError("convex rate left [0, 1): " + std::to_string(r));
  return r;
}

double convex_speedup(double m, const ConvexRateParams& p) {
  require_batch(m);
  return m * p.beta() / (p.beta() + p.lambda() * (m - 1.0));
}

double convex_speedup_exact(double m, const ConvexRateParams& p) {
  if (!(p.alpha() < p.beta())) throw InputError("exact speedup needs alpha < beta (otherwise t(1) = 1 step)");
  return std::log1p(-convex_step_size(m, p) * p.alpha()) / std::log1p(-p.alpha() / p.beta());
}

double g_lambda(double lambda, double m, double eta, double beta) {
  return sq(1.0 - eta * lambda) + eta * eta * lambda / m * (beta - lambda);
}

double eta0(double m, const QuadraticRateParams& p) {
  require_batch(m);
  return 2.0 * m / (p.beta() + (m - 1.0) * (p.lambda1() + p.lambdak()));
}

double eta1(double m, const QuadraticRateParams& p) {
  require_batch(m);
  return 2.0 * m / (p.beta() + (m - 1.0) * p.lambda1());
}

double g_max(double m, double eta, const QuadraticRateParams& p) {
  if (!(eta > 0.0)) throw InputError("step size must be positive");
  if (eta >= eta1(m, p))
    throw NonConvergentError("step size " + std::to_string(eta) + " is at or beyond the convergence boundary " +
                             std::to_string(eta1(m, p)));
  const double lambda = eta <= eta0(m, p) ? p.lambdak() : p.lambda1();
  return g_lambda(lambda, m, eta, p.beta());
}

double branch_point(const QuadraticRateParams& p) {
  if (p.flat()) return std::numeric_limits<double>::infinity();
  return p.beta() / (p.lambda1() - p.lambdak()) + 1.0;
}

double optimal_step(double m, const QuadraticRateParams& p) {
  require_batch(m);
  if (m <= branch_point(p)) return m / (p.beta() + (m - 1.0) * p.lambdak());
  return 2.0 * m / (p.beta() + (m - 1.0) * (p.lambda1() + p.lambdak()));
}

double first_branch_decrement(double m, const QuadraticRateParams& p) {
  require_batch(m);
  return m * p.lambdak() / (p.beta() + (m - 1.0) * p.lambdak());
}

double second_branch_decrement(double m, const QuadraticRateParams& p) {
  require_batch(m);
  return 4.0 * m * (m - 1.0) * p.lambda1() * p.lambdak() /
         sq(p.beta() + (m - 1.0) * (p.lambda1() + p.lambdak()));
}

double first_branch_rate(double m, const QuadraticRateParams& p) { return 1.0 - first_branch_decrement(m, p); }
double second_branch_rate(double m, const QuadraticRateParams& p) { return 1.0 - second_branch_decrement(m, p); }

double optimal_rate_decrement(double m, const QuadraticRateParams& p) {
  require_batch(m);
  return m <= branch_point(p) ? first_branch_decrement(m, p) : second_branch_decrement(m, p);
}

double optimal_rate(double m, const QuadraticRateParams& p) { return 1.0 - optimal_rate_decrement(m, p); }

bool hat_assumption_holds(const QuadraticRateParams& p) {
  return p.samples() > 0 && p.lambdak() / p.beta() <= 1.0 / static_cast<double>(p.samples());
}

double hat_branch_point(const QuadraticRateParams& p) {
  if (p.samples() <= 0) throw InputError("the lambda_k-free step size needs the sample count n");
  const double floor = p.beta() / static_cast<double>(p.samples());
  if (!(p.lambda1() > floor)) throw InputError("lambda_1 <= beta/n: lambda_k-free step size is degenerate");
  return p.beta() / (p.lambda1() - floor) + 1.0;
}

double hat_step(double m, const QuadraticRateParams& p) {
  require_batch(m);
  const double n = static_cast<double>(p.samples());
  if (m <= hat_branch_point(p)) return m / (p.beta() * (1.0 + (m - 1.0) / n));
  return 2.0 * m / (p.beta() + (m - 1.0) * (p.lambda1() + p.beta() / n));
}

double hat_rate_decrement(double m, const QuadraticRateParams& p) {
  require_batch(m);
  const double n = static_cast<double>(p.samples());
  if (m <= hat_branch_point(p)) return m * p.lambdak() / (p.beta() * (1.0 + (m - 1.0) / n));
  return 4.0 * m * (m - 1.0) * p.lambda1() * p.lambdak() / sq(p.beta() + (m - 1.0) * (p.lambda1() + p.beta() / n));
}

double hat_rate(double m, const QuadraticRateParams& p) { return 1.0 - hat_rate_decrement(m, p); }

double speedup_s(double m, const QuadraticRateParams& p) {
  require_batch(m);
  const double b = p.beta();
  if (m <= branch_point(p)) return m / (1.0 + (m - 1.0) * p.lambdak() / b);
  return 4.0 * m * (m - 1.0) * p.lambda1() / (b * sq(1.0 + (m - 1.0) * (p.lambda1() + p.lambdak()) / b));
}

double speedup_limit(const QuadraticRateParams& p) {
  if (p.flat()) return std::numeric_limits<double>::infinity();
  return 4.0 * p.lambda1() * p.beta() / sq(p.lambda1() + p.lambdak());
}

CriticalBatch critical_batch(const QuadraticRateParams& p) {
  CriticalBatch out;
  if (p.flat()) {
    out.unbounded = true;
    out.value = std::numeric_limits<double>::infinity();
    out.recommended = 0;
    return out;
  }
  out.value = branch_point(p);
  out.recommended = std::llround(out.value);
  return out;
}

double log_efficiency(double m, const QuadraticRateParams& p, EfficiencyBasis basis) {
  const double dec = basis == EfficiencyBasis::Optimal ? optimal_rate_decrement(m, p) : hat_rate_decrement(m, p);
  return std::log1p(-dec) / m;
}

double efficiency(double m, const QuadraticRateParams& p, EfficiencyBasis basis) {
  return std::exp(log_efficiency(m, p, basis));
}

std::int64_t best_batch(const QuadraticRateParams& p, std::int64_t m_max, EfficiencyBasis basis) {
  if (m_max < 1) throw InputError("m_max must be >= 1");
  std::int64_t best = 1;
  double best_value = log_efficiency(1.0, p, basis);
  for (std::int64_t m = 2; m <= m_max; ++m) {
    const double v = log_efficiency(static_cast<double>(m), p, basis);
    if (v < best_value) {
      best_value = v;
      best = m;
    }
  }
  return best;
}

std::int64_t iterations_to_target(double g, double l0, double eps) {
  if (!(g < 1.0)) throw NonConvergentError("rate g >= 1 never reaches the target");
  if (!(g > 0.0)) throw InputError("rate g must be positive");
  if (!(l0 > 0.0) || !(eps > 0.0) || !(eps < l0)) throw InputError("need 0 < eps < l0");
  const double x = std::log(eps / l0) / std::log(g);
  // x lands a few ulps off an integer when eps / l0 is an exact power of g
  const double nearest = std::round(x);
  const double t = std::abs(x - nearest) <= 1e-9 * std::max(1.0, nearest) ? nearest : std::ceil(x);
  return std::max<std::int64_t>(1, static_cast<std::int64_t>(t));
}

const char* to_string(Regime r) noexcept {
  return r == Regime::LinearScaling ? "linear-scaling" : "saturation";
}

std::vector<RatePoint> rate_table(std::span<const std::int64_t> m_grid, const QuadraticRateParams& p) {
  std::set<std::int64_t> seen;
  for (auto m : m_grid) {
    if (m < 1) throw InputError("batch sizes must be >= 1");
    if (!seen.insert(m).second) throw InputError("batch sizes must be distinct");
  }
  const bool hat_defined = p.samples() > 0 && p.lambda1() > p.beta() / static_cast<double>(p.samples());
  const CriticalBatch crit = critical_batch(p);

  std::vector<RatePoint> rows;
  rows.reserve(m_grid.size());
  for (auto mi : m_grid) {
    const double m = static_cast<double>(mi);
    RatePoint r;
    r.m = mi;
    r.eta_star = optimal_step(m, p);
    r.g_star = optimal_rate(m, p);
    if (hat_defined) {
      r.eta_hat = hat_step(m, p);
      r.g_hat = hat_rate(m, p);
    }
    r.speedup = speedup_s(m, p);
    r.efficiency = efficiency(m, p);
    r.regime = (crit.unbounded || m <= crit.value) ? Regime::LinearScaling : Regime::Saturation;
    rows.push_back(r);
  }
  return rows;
}

}  // namespace mbsgd
