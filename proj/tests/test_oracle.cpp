#include "mbsgd/engine.hpp"
#include "mbsgd/error.hpp"
#include "mbsgd/oracle.hpp"
#include "mbsgd/parallel.hpp"
#include "mbsgd/problems.hpp"
#include "mbsgd/rng.hpp"

#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <cmath>
#include <vector>

namespace mbsgd {
namespace {

// Restores the thread count a test changed.
class ThreadGuard {
 public:
  ThreadGuard() : saved_(max_threads()) {}
  ~ThreadGuard() { set_threads(saved_); }

 private:
  int saved_;
};

QuadraticProblem small_problem(std::int64_t n, std::int64_t d, std::uint64_t seed) {
  return random_interpolated_quadratic(n, d, UniformNorms{0.4, 1.0}, seed);
}

TEST(PairwiseSum, MatchesSequentialOnExactValues) {
  std::vector<double> v(1000);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i);
  EXPECT_EQ(pairwise_sum(v), 499500.0);
  EXPECT_EQ(pairwise_sum(std::vector<double>{}), 0.0);
}

TEST(MomentStep, ZeroStepIsIdentity) {
  const QuadraticProblem p = small_problem(5, 3, 1);
  const MomentState s = initial_moment(gaussian_matrix(3, 1, 2));
  const MomentState next = exact_moment_step(s, p, 2.0, 0.0);
  EXPECT_TRUE(next.moment.isApprox(s.moment, 1e-15));
  EXPECT_EQ(next.iteration, 1);
}

// On the tightness instance M = cI maps to g_lambda(beta/n) c I.
TEST(MomentStep, TightnessFactorIsGLambda) {
  constexpr std::int64_t n = 6;
  const QuadraticProblem p = tightness_instance(n, 1.0, 3);
  MomentState s{Eigen::MatrixXd::Identity(n, n) * 2.0, 0};
  for (double m : {1.0, 3.0, 8.0}) {
    const double eta = 0.8 * eta1(m, p.rate_params());
    const MomentState next = exact_moment_step(s, p, m, eta);
    EXPECT_NEAR(next.trace() / s.trace(), g_lambda(1.0 / n, m, eta, 1.0), 1e-12);
  }
}

TEST(MomentStep, OneStepMatchesEnumeration) {
  const QuadraticProblem p = small_problem(3, 2, 4);
  const Eigen::MatrixXd delta0 = gaussian_matrix(2, 1, 5);
  const double eta = 0.5 * eta1(2, p.rate_params());
  const MomentState s = exact_moment_step(initial_moment(delta0), p, 2.0, eta);
  EXPECT_NEAR(s.trace(), enumerate_expected_error(p, 2, eta, delta0, 1), 1e-13 * s.trace());
}

TEST(MomentStep, MultiStepMatchesEnumeration) {
  const QuadraticProblem p = small_problem(4, 3, 6);
  const Eigen::MatrixXd delta0 = gaussian_matrix(3, 1, 7);
  for (std::int64_t m : {1, 2}) {
    const double eta = 0.9 * optimal_step(static_cast<double>(m), p.rate_params());
    const auto traj = moment_trajectory(p, static_cast<double>(m), eta, delta0, 4);
    ASSERT_EQ(traj.size(), 5u);
    for (std::int64_t t = 1; t <= (m == 1 ? 4 : 3); ++t)
      EXPECT_NEAR(traj[t].trace(), enumerate_expected_error(p, m, eta, delta0, t), 1e-12 * traj[t].trace());
  }
}

TEST(MomentStep, SymmetricAndTraceNonIncreasingBelowEta1) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const QuadraticProblem p = random_interpolated_quadratic(9, 6, Decaying{1.0}, seed);
    for (double m : {1.0, 4.0}) {
      const double eta = 0.95 * eta1(m, p.rate_params());
      const auto traj = moment_trajectory(p, m, eta, gaussian_matrix(6, 1, 100 + seed), 50);
      for (std::size_t t = 1; t < traj.size(); ++t) {
        const Eigen::MatrixXd& mt = traj[t].moment;
        EXPECT_LE((mt - mt.transpose()).cwiseAbs().maxCoeff(), 1e-12 * mt.cwiseAbs().maxCoeff());
        EXPECT_LE(traj[t].trace(), traj[t - 1].trace() * (1 + 1e-14));
        EXPECT_GE(traj[t].trace(), 0.0);
      }
    }
  }
}

TEST(MomentStep, LossAndRangeTrace) {
  const QuadraticProblem p = random_interpolated_quadratic(4, 7, UniformNorms{0.5, 1.0}, 9);
  const Eigen::MatrixXd delta0 = gaussian_matrix(7, 1, 10);
  const MomentState s = initial_moment(delta0);
  const Eigen::VectorXd d = delta0.col(0);
  EXPECT_NEAR(moment_loss(s, p.covariance()), d.dot(p.covariance().matrix() * d), 1e-13);
  EXPECT_NEAR(range_trace(s, p.spectral()), project_range(d, p.spectral()).squaredNorm(), 1e-13);
}

TEST(Enumeration, SingleSampleIsDeterministicRecursion) {
  RowMatrix x(1, 3);
  x << 0.5, -1.0, 0.25;
  const Eigen::MatrixXd w = gaussian_matrix(3, 1, 1);
  const QuadraticProblem p(DataMatrix(x), x * w, w);
  const Eigen::MatrixXd delta0 = gaussian_matrix(3, 1, 2);
  const double eta = 0.7;
  Eigen::VectorXd d = delta0.col(0);
  const Eigen::VectorXd xi = x.row(0).transpose();
  for (int t = 0; t < 6; ++t) d -= eta * xi * xi.dot(d);
  EXPECT_NEAR(enumerate_expected_error(p, 1, eta, delta0, 6), d.squaredNorm(), 1e-14);
}

TEST(Enumeration, ContractsForSmallSteps) {
  const QuadraticProblem p = small_problem(3, 4, 11);
  const Eigen::MatrixXd delta0 = gaussian_matrix(4, 1, 12);
  EXPECT_LE(enumerate_expected_error(p, 2, 0.1, delta0, 5), delta0.squaredNorm());
}

TEST(Enumeration, BudgetIsHardError) {
  const QuadraticProblem p = small_problem(10, 3, 13);
  const Eigen::MatrixXd delta0 = gaussian_matrix(3, 1, 14);
  EXPECT_THROW(enumerate_expected_error(p, 4, 0.1, delta0, 2), BudgetError);
  EXPECT_THROW(serial::enumerate_expected_error(p, 4, 0.1, delta0, 2), BudgetError);
}

TEST(Enumeration, SerialAndParallelAgree) {
  const QuadraticProblem p = small_problem(4, 3, 15);
  const Eigen::MatrixXd delta0 = gaussian_matrix(3, 1, 16);
  const double eta = optimal_step(2, p.rate_params());
  const double par = enumerate_expected_error(p, 2, eta, delta0, 4);
  const double ser = serial::enumerate_expected_error(p, 2, eta, delta0, 4);
  EXPECT_NEAR(par, ser, 1e-13 * ser);
}

TEST(Enumeration, BitwiseStableAcrossThreadCounts) {
  ThreadGuard guard;
  const QuadraticProblem p = small_problem(4, 3, 17);
  const Eigen::MatrixXd delta0 = gaussian_matrix(3, 1, 18);
  set_threads(1);
  const double one = enumerate_expected_error(p, 2, 0.5, delta0, 4);
  for (int threads : {2, 3, 4, 7}) {
    set_threads(threads);
    EXPECT_EQ(enumerate_expected_error(p, 2, 0.5, delta0, 4), one) << threads << " threads";
  }
}

TEST(MonteCarlo, AgreesWithEnumeration) {
  const QuadraticProblem p = small_problem(4, 3, 19);
  const Eigen::MatrixXd delta0 = gaussian_matrix(3, 1, 20);
  const double eta = optimal_step(2, p.rate_params());
  const double exact = enumerate_expected_error(p, 2, eta, delta0, 4);
  const McEstimate mc = mc_expected_error(p, 2, eta, delta0, 4, 10000, 21);
  EXPECT_EQ(mc.trials, 10000);
  EXPECT_EQ(mc.seed, 21u);
  EXPECT_GT(mc.stderr_mean, 0.0);
  EXPECT_LE(std::abs(mc.mean - exact), 4.0 * mc.stderr_mean);
}

TEST(MonteCarlo, ZeroStartHasZeroMeanAndError) {
  const QuadraticProblem p = small_problem(4, 3, 22);
  const McEstimate mc = mc_expected_error(p, 2, 0.5, Eigen::MatrixXd::Zero(3, 1), 10, 50, 1);
  EXPECT_EQ(mc.mean, 0.0);
  EXPECT_EQ(mc.stderr_mean, 0.0);
  EXPECT_THROW(mc_expected_error(p, 2, 0.5, Eigen::MatrixXd::Zero(3, 1), 10, 1, 1), InputError);
}

TEST(MonteCarlo, StandardErrorScalesWithTrialCount) {
  const QuadraticProblem p = small_problem(6, 4, 23);
  const Eigen::MatrixXd delta0 = gaussian_matrix(4, 1, 24);
  const McEstimate a = mc_expected_error(p, 2, 0.8, delta0, 10, 2000, derive_seed(25, 0));
  const McEstimate b = mc_expected_error(p, 2, 0.8, delta0, 10, 8000, derive_seed(25, 1));
  EXPECT_NEAR(b.stderr_mean / a.stderr_mean, 0.5, 0.5 * 0.3);
}

TEST(MonteCarlo, SerialAndParallelAgree) {
  ThreadGuard guard;
  const QuadraticProblem p = small_problem(8, 5, 26);
  const Eigen::MatrixXd delta0 = gaussian_matrix(5, 1, 27);
  const McEstimate ser = serial::mc_expected_error(p, 3, 0.7, delta0, 25, 3000, 28);
  set_threads(1);
  const McEstimate one = mc_expected_error(p, 3, 0.7, delta0, 25, 3000, 28);
  EXPECT_NEAR(one.mean, ser.mean, 1e-12 * ser.mean);
  EXPECT_NEAR(one.stderr_mean, ser.stderr_mean, 1e-9 * ser.stderr_mean);
  for (int threads : {2, 4, 5}) {
    set_threads(threads);
    const McEstimate many = mc_expected_error(p, 3, 0.7, delta0, 25, 3000, 28);
    EXPECT_EQ(many.mean, one.mean);
    EXPECT_EQ(many.stderr_mean, one.stderr_mean);
  }
}

// Trial j of the estimator is the engine run seeded with derive_seed(seed, j).
TEST(MonteCarlo, TrialsMatchEngineRuns) {
  const QuadraticProblem p = small_problem(8, 5, 29);
  const Eigen::MatrixXd delta0 = gaussian_matrix(5, 1, 30);
  constexpr std::int64_t trials = 16, steps = 12;
  std::vector<double> errs;
  for (std::int64_t j = 0; j < trials; ++j) {
    SGDConfig c;
    c.batch_size = 2;
    c.step = ExplicitStep{0.6};
    c.max_iterations = steps;
    c.trace_stride = steps;
    c.rng_seed = derive_seed(31, j);
    c.initial = delta0;
    const Trace t = sgd_run_quadratic(p, c);
    errs.push_back((t.final_parameters - p.minimizer()).squaredNorm());
  }
  const McEstimate mc = mc_expected_error(p, 2, 0.6, delta0, steps, trials, 31);
  EXPECT_NEAR(mc.mean, pairwise_sum(errs) / trials, 1e-12 * mc.mean);
}

TEST(MonteCarlo, MajorityDivergenceIsFlagged) {
  const QuadraticProblem p = tightness_instance(6, 1.0, 32);
  const Eigen::MatrixXd delta0 = gaussian_matrix(6, 1, 33);
  const double eta = 5.0 * eta1(2, p.rate_params());
  const McEstimate mc = mc_expected_error(p, 2, eta, delta0, 400, 20, 34);
  EXPECT_TRUE(mc.flagged);
  EXPECT_GT(mc.diverged, 10);
}

TEST(LossCurve, ConvexCurveMatchesEngineRuns) {
  const QuadraticProblem base = random_interpolated_quadratic(10, 3, UniformNorms{0.5, 1.0}, 35);
  const ConvexProblem cp = logcosh_problem(base, 0.3);
  SGDConfig c;
  c.batch_size = 3;
  c.max_iterations = 30;
  c.trace_stride = 10;
  c.initial = Eigen::MatrixXd(gaussian_matrix(3, 1, 36));
  const McCurve curve = mc_loss_curve(cp, c, 8, 37);
  ASSERT_EQ(curve.iterations, (std::vector<std::int64_t>{0, 10, 20, 30}));
  std::vector<double> last;
  for (std::int64_t j = 0; j < 8; ++j) {
    c.rng_seed = derive_seed(37, j);
    last.push_back(sgd_run_convex(cp, c).records.back().loss);
  }
  EXPECT_NEAR(curve.points.back().mean, pairwise_sum(last) / 8.0, 1e-14);
}

TEST(MbNorm, BatchOneIsExact) {
  const QuadraticProblem base = random_interpolated_quadratic(5, 3, UniformNorms{0.5, 1.0}, 38);
  const ConvexProblem cp = logcosh_problem(base, 0.4);
  const Eigen::VectorXd w = gaussian_matrix(3, 1, 39).col(0);
  const MbNormCheck c = check_mb_norm_identity(cp, std::span<const double>(w.data(), 3), 1);
  EXPECT_TRUE(c.exact);
  EXPECT_LE(c.gap, 1e-15 * std::max(1.0, c.rhs));
}

TEST(MbNorm, QuadraticIdentityByEnumeration) {
  const QuadraticProblem base = random_interpolated_quadratic(4, 3, UniformNorms{0.5, 1.0}, 40);
  const ConvexProblem cp = quadratic_as_convex(base);
  const Eigen::VectorXd w = gaussian_matrix(3, 1, 41).col(0);
  const MbNormCheck c = check_mb_norm_identity(cp, std::span<const double>(w.data(), 3), 3);
  EXPECT_LE(c.gap, 1e-12);
  EXPECT_GT(c.lhs, 0.0);
}

TEST(MbNorm, VanishesAtMinimizer) {
  const QuadraticProblem base = random_interpolated_quadratic(4, 3, UniformNorms{0.5, 1.0}, 42);
  const ConvexProblem cp = logcosh_problem(base, 1.0);
  const MbNormCheck c = check_mb_norm_identity(cp, std::span<const double>(cp.minimizer().data(), 3), 2);
  EXPECT_LE(c.lhs, 1e-28);
  EXPECT_LE(c.rhs, 1e-28);
}

TEST(MbNorm, MonteCarloModeAndBudget) {
  const QuadraticProblem base = random_interpolated_quadratic(40, 3, UniformNorms{0.5, 1.0}, 43);
  const ConvexProblem cp = logcosh_problem(base, 0.5);
  const Eigen::VectorXd w = gaussian_matrix(3, 1, 44).col(0);
  const std::span<const double> ws(w.data(), 3);
  EXPECT_THROW(check_mb_norm_identity(cp, ws, 4), BudgetError);
  const MbNormCheck c = check_mb_norm_identity_mc(cp, ws, 8, 20000, 45);
  EXPECT_FALSE(c.exact);
  EXPECT_LE(c.gap, 4.0 * c.lhs_stderr);
}

TEST(Hm2, BatchOneIsSingleSampleSquare) {
  const QuadraticProblem p = small_problem(5, 3, 46);
  const Hm2Check c = check_hm2_expansion(p, 1);
  EXPECT_LE((c.exact - expected_single_sample_square(p.data())).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Hm2, TightnessBoundIsEquality) {
  const QuadraticProblem p = tightness_instance(5, 1.0, 47);
  for (std::int64_t m : {1, 2, 3}) {
    const Hm2Check c = check_hm2_expansion(p, m);
    EXPECT_LE(std::abs(c.bound_min_eigenvalue), 1e-12);
    EXPECT_LE(c.max_gap, 1e-13);
  }
}

TEST(Hm2, RandomInstanceMatchesClosedForm) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const QuadraticProblem p = small_problem(3, 4, 48 + seed);
    const Hm2Check c = check_hm2_expansion(p, 2);
    EXPECT_LE(c.max_gap, 1e-13);
    EXPECT_GE(c.bound_min_eigenvalue, -1e-10 * p.beta() * p.beta());
  }
  EXPECT_THROW(check_hm2_expansion(small_problem(100, 2, 1), 4), BudgetError);
}

}  // namespace
}  // namespace mbsgd
