#include "mbsgd/engine.hpp"
#include "mbsgd/error.hpp"
#include "mbsgd/problems.hpp"
#include "mbsgd/rng.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <vector>

namespace mbsgd {
namespace {

SGDConfig config(std::int64_t m, StepPolicy step, std::int64_t iterations, std::uint64_t seed = 0) {
  SGDConfig c;
  c.batch_size = m;
  c.step = step;
  c.max_iterations = iterations;
  c.rng_seed = seed;
  return c;
}

TEST(SgdQuadratic, ZeroErrorIsFixedPoint) {
  const QuadraticProblem p = random_interpolated_quadratic(10, 6, UniformNorms{}, 1);
  SGDConfig c = config(3, OptimalStep{}, 50);
  c.initial = Eigen::MatrixXd(Eigen::MatrixXd::Zero(6, 1));
  const Trace t = sgd_run_quadratic(p, c);
  ASSERT_EQ(t.records.size(), 51u);
  // residuals at w* are round-off, not zero
  for (const auto& r : t.records) EXPECT_LE(r.loss, 1e-28);
  EXPECT_EQ(t.status, RunStatus::ExhaustedBudget);
}

TEST(SgdQuadratic, SeedDeterminismIsBitwise) {
  const QuadraticProblem p = random_interpolated_quadratic(20, 12, Decaying{1.0}, 2);
  SGDConfig c = config(4, OptimalStep{}, 300, 99);
  c.initial = GaussianStart{5, false};
  const Trace a = sgd_run_quadratic(p, c);
  const Trace b = sgd_run_quadratic(p, c);
  ASSERT_EQ(a.records.size(), b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    EXPECT_EQ(a.records[i].loss, b.records[i].loss);
    EXPECT_EQ(a.records[i].range_error, b.records[i].range_error);
  }
  EXPECT_TRUE(a.final_parameters == b.final_parameters);
  c.rng_seed = 100;
  EXPECT_FALSE(sgd_run_quadratic(p, c).final_parameters == a.final_parameters);
}

TEST(SgdQuadratic, RecordsStrideAndEpochs) {
  const QuadraticProblem p = tightness_instance(16, 1.0, 3);
  SGDConfig c = config(4, OptimalStep{}, 103);
  c.trace_stride = 10;
  const Trace t = sgd_run_quadratic(p, c);
  ASSERT_EQ(t.records.size(), 12u);
  EXPECT_EQ(t.records.back().iteration, 103);
  for (std::size_t i = 1; i < t.records.size(); ++i) EXPECT_GT(t.records[i].iteration, t.records[i - 1].iteration);
  for (const auto& r : t.records) EXPECT_EQ(r.epoch, static_cast<double>(r.iteration * 4) / 16.0);
}

TEST(SgdQuadratic, NullSpaceErrorIsConserved) {
  const QuadraticProblem p = random_interpolated_quadratic(6, 20, UniformNorms{0.5, 1.0}, 4);
  SGDConfig c = config(2, OptimalStep{}, 2000, 7);
  c.initial = GaussianStart{8, false};
  c.trace_stride = 50;
  const Trace t = sgd_run_quadratic(p, c);
  const double q0 = t.records.front().null_error;
  ASSERT_GT(q0, 0.1);
  for (const auto& r : t.records) EXPECT_LE(std::abs(r.null_error - q0), 1e-8 * q0);
  EXPECT_LT(t.records.back().range_error, 1e-3 * t.records.front().range_error);
}

TEST(SgdQuadratic, LossDependsOnRangeComponentOnly) {
  const QuadraticProblem p = random_interpolated_quadratic(6, 15, Decaying{0.5}, 5);
  SGDConfig c = config(3, OptimalStep{}, 40, 1);
  c.initial = GaussianStart{2, false};
  const Trace t = sgd_run_quadratic(p, c);
  const Eigen::VectorXd delta = (t.final_parameters - p.minimizer()).col(0);
  const Eigen::VectorXd pd = project_range(delta, p.spectral());
  const Eigen::MatrixXd& h = p.covariance().matrix();
  const double full = delta.dot(h * delta), restricted = pd.dot(h * pd);
  EXPECT_NEAR(t.records.back().loss, restricted, 1e-10 * restricted);
  EXPECT_NEAR(full, restricted, 1e-10 * restricted);
}

TEST(SgdQuadratic, DivergesAboveConvergenceBoundary) {
  const QuadraticProblem p = tightness_instance(8, 1.0, 3);
  const double eta = 3.0 * eta1(2, p.rate_params());
  const Trace t = sgd_run_quadratic(p, config(2, ExplicitStep{eta}, 5000, 1));
  EXPECT_EQ(t.status, RunStatus::Diverged);
  EXPECT_LT(t.records.back().iteration, 5000);
}

TEST(SgdQuadratic, StopsAtTarget) {
  const QuadraticProblem p = tightness_instance(8, 1.0, 3);
  SGDConfig c = config(1, OptimalStep{}, 100000, 1);
  c.target_loss = 1e-6;
  const Trace t = sgd_run_quadratic(p, c);
  EXPECT_EQ(t.status, RunStatus::ReachedTarget);
  EXPECT_LE(t.records.back().loss, 1e-6);
  EXPECT_GT(t.records[t.records.size() - 2].loss, 1e-6);
}

TEST(SgdQuadratic, RejectsInvalidConfig) {
  const QuadraticProblem p = tightness_instance(4, 1.0, 3);
  EXPECT_THROW(sgd_run_quadratic(p, config(0, OptimalStep{}, 10)), InputError);
  EXPECT_THROW(sgd_run_quadratic(p, config(1, ExplicitStep{-1.0}, 10)), InputError);
  EXPECT_THROW(sgd_run_quadratic(p, config(1, HatStep{0.0}, 10)), InputError);
  SGDConfig c = config(1, OptimalStep{}, 10);
  c.trace_stride = 0;
  EXPECT_THROW(sgd_run_quadratic(p, c), InputError);
  c = config(1, OptimalStep{}, 10);
  c.initial = Eigen::MatrixXd(Eigen::MatrixXd::Zero(3, 1));
  EXPECT_THROW(sgd_run_quadratic(p, c), DimensionError);
}

// Tightness instance, m = 1 at eta* = 1/beta: E||delta_t||^2 = (1 - 1/n)^t ||delta_0||^2.
TEST(SgdQuadratic, MonteCarloMatchesTightRate) {
  constexpr std::int64_t n = 8, trials = 10000, steps = 20;
  const QuadraticProblem p = tightness_instance(n, 1.0, 11);
  const Eigen::MatrixXd delta0 = gaussian_matrix(n, 1, 12);
  std::vector<double> sum(steps + 1, 0.0), sum2(steps + 1, 0.0);
  for (std::int64_t j = 0; j < trials; ++j) {
    SGDConfig c = config(1, OptimalStep{}, steps, derive_seed(13, j));
    c.initial = delta0;
    const Trace t = sgd_run_quadratic(p, c);
    for (std::size_t r = 0; r < t.records.size(); ++r) {
      // loss = delta^T (I/n) delta on this instance
      const double e = t.records[r].loss * n;
      sum[r] += e;
      sum2[r] += e * e;
    }
  }
  for (std::int64_t s : {1, 5, 10, 20}) {
    const double mean = sum[s] / trials;
    const double se = std::sqrt((sum2[s] / trials - mean * mean) / (trials - 1));
    const double expected = std::pow(0.875, static_cast<double>(s)) * delta0.squaredNorm();
    EXPECT_LE(std::abs(mean - expected), 3.0 * se) << "t=" << s;
  }
}

TEST(SgdQuadratic, FullGradientIsDeterministicDescent) {
  const QuadraticProblem p = random_interpolated_quadratic(12, 5, UniformNorms{0.5, 1.0}, 6);
  const double eta = 1.0 / p.spectral().lambda1();
  SGDConfig c = config(3, ExplicitStep{eta}, 30);
  c.full_gradient = true;
  c.initial = GaussianStart{1, true};
  const Trace t = sgd_run_quadratic(p, c);
  const Eigen::MatrixXd& h = p.covariance().matrix();
  Eigen::VectorXd delta = initial_error(p, GaussianStart{1, true}).col(0);
  for (std::int64_t s = 1; s <= 30; ++s) {
    delta = delta - eta * h * delta;
    EXPECT_NEAR(t.records[s].loss, delta.dot(h * delta), 1e-12 * t.records[0].loss);
  }
  // and per-direction contraction bounded by max (1 - eta lambda_i)^2
  double worst = 0.0;
  for (Eigen::Index i = 0; i < p.spectral().rank(); ++i)
    worst = std::max(worst, std::pow(1.0 - eta * p.spectral().eigenvalues(i), 2));
  for (std::size_t s = 1; s < t.records.size(); ++s) EXPECT_LE(t.records[s].loss, worst * t.records[s - 1].loss * (1 + 1e-12));
}

TEST(EmpiricalIterations, FullGradientMatchesClosedForm) {
  const QuadraticProblem p = tightness_instance(16, 1.0, 2);
  const double eta = 0.7 * 16;
  const double g = std::pow(1.0 - eta / 16.0, 2);
  SGDConfig c = config(1, ExplicitStep{eta}, 200);
  c.full_gradient = true;
  const std::vector<Trace> traces{sgd_run_quadratic(p, c)};
  const double l0 = traces[0].records[0].loss, eps = 1e-9 * l0;
  const auto measured = empirical_iterations(traces, eps);
  ASSERT_TRUE(measured.has_value());
  EXPECT_LE(std::llabs(*measured - iterations_to_target(g, l0, eps)), 1);
  EXPECT_EQ(empirical_iterations(traces, 2 * l0), 0);
  c.max_iterations = 3;
  EXPECT_FALSE(empirical_iterations(std::vector<Trace>{sgd_run_quadratic(p, c)}, eps).has_value());
}

// t(1)/t(4) measured on the tightness instance against s(4).
TEST(EmpiricalIterations, BatchSpeedupMatchesS) {
  constexpr std::int64_t n = 32, trials = 400;
  const QuadraticProblem p = tightness_instance(n, 1.0, 21);
  const Eigen::MatrixXd delta0 = gaussian_matrix(n, 1, 22);
  const double eps = 1e-3 * delta0.squaredNorm() / n;
  auto t_of = [&](std::int64_t m) {
    std::vector<Trace> traces;
    for (std::int64_t j = 0; j < trials; ++j) {
      SGDConfig c = config(m, OptimalStep{}, 2000, derive_seed(23, m, j));
      c.initial = delta0;
      traces.push_back(sgd_run_quadratic(p, c));
    }
    return empirical_iterations(traces, eps);
  };
  const auto t1 = t_of(1), t4 = t_of(4);
  ASSERT_TRUE(t1 && t4);
  const double ratio = static_cast<double>(*t1) / static_cast<double>(*t4);
  const double s4 = speedup_s(4, p.rate_params());
  EXPECT_LE(std::abs(ratio - s4), 0.25 * s4) << "ratio " << ratio << " s(4) " << s4;
}

TEST(Aggregate, MeanAndStandardError) {
  Trace a, b;
  a.records = {{0, 0.0, 2.0, 0, 0}, {5, 1.0, 1.0, 0, 0}};
  b.records = {{0, 0.0, 4.0, 0, 0}, {5, 1.0, 3.0, 0, 0}, {10, 2.0, 1.0, 0, 0}};
  const std::vector<Trace> traces{a, b};
  const auto curve = aggregate_traces(traces);
  ASSERT_EQ(curve.size(), 2u);
  EXPECT_DOUBLE_EQ(curve[0].mean_loss, 3.0);
  EXPECT_DOUBLE_EQ(curve[0].stderr_loss, 1.0);
  EXPECT_DOUBLE_EQ(curve[1].mean_loss, 2.0);
  b.records[1].iteration = 6;
  EXPECT_THROW(aggregate_traces(std::vector<Trace>{a, b}), InputError);
  EXPECT_THROW(aggregate_traces(std::vector<Trace>{}), InputError);
}

TEST(SgdConvex, MinimizerIsFixedPoint) {
  const QuadraticProblem base = random_interpolated_quadratic(10, 4, UniformNorms{0.5, 1.0}, 7);
  const ConvexProblem cp = logcosh_problem(base, 0.5);
  SGDConfig c = config(2, OptimalStep{}, 100, 3);
  c.initial = Eigen::MatrixXd(Eigen::MatrixXd::Zero(4, 1));
  const Trace t = sgd_run_convex(cp, c);
  EXPECT_LE((t.final_parameters.col(0) - cp.minimizer()).norm(), 1e-14 * (1.0 + cp.minimizer().norm()));
  EXPECT_EQ(t.status, RunStatus::ExhaustedBudget);
  for (const auto& r : t.records) EXPECT_LE(r.loss, 1e-12);
  EXPECT_THROW(sgd_run_convex(cp, config(2, HatStep{}, 10)), InputError);
}

TEST(SgdConvex, QuadraticWrapperReproducesTrajectoryBitwise) {
  const QuadraticProblem base = random_interpolated_quadratic(16, 5, Decaying{1.0}, 8);
  const ConvexProblem cp = quadratic_as_convex(base);
  const Eigen::MatrixXd delta0 = gaussian_matrix(5, 1, 9);
  for (std::int64_t m : {1, 3, 8}) {
    const double eta = optimal_step(static_cast<double>(m), base.rate_params());
    SGDConfig c = config(m, ExplicitStep{eta}, 400, 10 + m);
    c.initial = delta0;
    c.trace_stride = 7;
    const Trace q = sgd_run_quadratic(base, c);
    const Trace v = sgd_run_convex(cp, c);
    ASSERT_EQ(q.records.size(), v.records.size());
    EXPECT_TRUE(Eigen::VectorXd(q.final_parameters.col(0)) == Eigen::VectorXd(v.final_parameters.col(0)));
    for (std::size_t r = 0; r < q.records.size(); ++r) {
      EXPECT_EQ(q.records[r].iteration, v.records[r].iteration);
      // half-squared per-sample loss against delta^T H delta
      EXPECT_NEAR(2.0 * v.records[r].loss, q.records[r].loss, 1e-10 * q.records[0].loss);
    }
  }
}

// E L(w_t) <= (lambda/2)(1 - eta*(m) alpha)^t ||delta_0||^2 on the log-cosh family.
TEST(SgdConvex, LogCoshStaysBelowConvexBound) {
  const QuadraticProblem base = random_interpolated_quadratic(12, 4, UniformNorms{0.5, 1.0}, 30);
  const ConvexProblem cp = logcosh_problem(base, 0.5);
  const Eigen::MatrixXd delta0 = gaussian_matrix(4, 1, 31);
  for (std::int64_t m : {1, 4}) {
    std::vector<Trace> traces;
    for (std::int64_t j = 0; j < 1000; ++j) {
      SGDConfig c = config(m, OptimalStep{}, 100, derive_seed(32, m, j));
      c.initial = delta0;
      c.trace_stride = 10;
      traces.push_back(sgd_run_convex(cp, c));
    }
    const double rate = convex_rate(static_cast<double>(m), cp.constants());
    for (const auto& pt : aggregate_traces(traces)) {
      const double bound = 0.5 * cp.constants().lambda() * std::pow(rate, static_cast<double>(pt.iteration)) *
                           delta0.squaredNorm();
      EXPECT_LE(pt.mean_loss - 3.0 * pt.stderr_loss, bound) << "m=" << m << " t=" << pt.iteration;
    }
  }
}

}  // namespace
}  // namespace mbsgd
