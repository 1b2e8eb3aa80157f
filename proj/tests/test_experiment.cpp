#include "mbsgd/error.hpp"
#include "mbsgd/experiment.hpp"
#include "mbsgd/parallel.hpp"
#include "mbsgd/rng.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

namespace mbsgd {
namespace {

namespace fs = std::filesystem;

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "mbsgd_test_experiment" / name;
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

ExperimentConfig small_config() {
  ExperimentConfig c;
  c.problem.kind = ProblemKind::Tightness;
  c.problem.n = 16;
  c.batch_sizes = {4, 1, 8};
  c.trials = 3;
  c.max_iterations = 300;
  c.trace_stride = 10;
  c.seed = 5;
  c.target_ratio = 0.01;
  return c;
}

TEST(BatchGrid, Forms) {
  EXPECT_EQ(parse_batch_grid("1,2,8"), (std::vector<std::int64_t>{1, 2, 8}));
  EXPECT_EQ(parse_batch_grid("1:4"), (std::vector<std::int64_t>{1, 2, 3, 4}));
  EXPECT_EQ(parse_batch_grid("1:20:x2"), (std::vector<std::int64_t>{1, 2, 4, 8, 16}));
  EXPECT_EQ(parse_batch_grid("2:10:4"), (std::vector<std::int64_t>{2, 6, 10}));
  EXPECT_EQ(parse_batch_grid("1, 64"), (std::vector<std::int64_t>{1, 64}));
  EXPECT_THROW(parse_batch_grid("1,1"), InputError);
  EXPECT_THROW(parse_batch_grid("0"), InputError);
  EXPECT_THROW(parse_batch_grid("4:2"), InputError);
  EXPECT_THROW(parse_batch_grid("a"), InputError);
  EXPECT_THROW(parse_batch_grid(""), InputError);
  EXPECT_THROW(parse_batch_grid("1:8:x1"), InputError);
}

TEST(Config, Validation) {
  ExperimentConfig c = small_config();
  EXPECT_NO_THROW(c.validate());
  c.batch_sizes = {2, 2};
  EXPECT_THROW(c.validate(), InputError);
  c = small_config();
  c.trials = 0;
  EXPECT_THROW(c.validate(), InputError);
  c = small_config();
  c.step.multiplier = 0.0;
  EXPECT_THROW(c.validate(), InputError);
  c = small_config();
  c.target_loss = 1.0;
  EXPECT_THROW(c.validate(), InputError);
  c = small_config();
  c.step.kind = StepKind::Explicit;
  EXPECT_THROW(c.validate(), InputError);
}

TEST(Config, JsonUsesFlagNames) {
  const std::string json = to_json(small_config());
  for (const char* key : {"\"problem\"", "\"n\"", "\"m\"", "\"step\"", "\"trials\"", "\"iterations\"", "\"seed\"",
                          "\"target-ratio\"", "\"stride\""})
    EXPECT_NE(json.find(key), std::string::npos) << key;
}

TEST(BuildProblem, SpectrumFromTopAndBulk) {
  ProblemSpec s;
  s.kind = ProblemKind::Spectrum;
  s.n = 8;
  s.top_eigenvalue = 0.2;
  s.top_count = 2;
  s.bulk_mass = 0.6;
  const QuadraticProblem p = build_problem(s);
  EXPECT_NEAR(p.beta(), 1.0, 1e-15);
  EXPECT_NEAR(p.spectral().lambda1(), 0.2, 1e-15);
  EXPECT_NEAR(p.spectral().lambdak(), 0.1, 1e-15);
  s.top_count = 9;
  EXPECT_THROW(build_problem(s), InputError);
  ProblemSpec k;
  k.kind = ProblemKind::Kernel;
  EXPECT_THROW(build_problem(k), InputError);
}

TEST(Sweep, GridSortedAndSeedsDerived) {
  const ExperimentConfig c = small_config();
  const QuadraticProblem p = build_problem(c.problem);
  const SweepResult r = run_sweep(p, c);
  ASSERT_EQ(r.summaries.size(), 3u);
  EXPECT_EQ(r.summaries[0].m, 1);
  EXPECT_EQ(r.summaries[2].m, 8);
  ASSERT_EQ(r.cells.size(), 9u);
  for (const auto& cell : r.cells) {
    EXPECT_EQ(cell.seed, derive_seed(5, static_cast<std::uint64_t>(cell.m), static_cast<std::uint64_t>(cell.trial)));
    EXPECT_EQ(cell.trace.records.front().loss, r.initial_loss);
  }
  EXPECT_EQ(*r.target, 0.01 * r.initial_loss);
  for (const auto& s : r.summaries) EXPECT_EQ(s.step_size, optimal_step(static_cast<double>(s.m), p.rate_params()));
}

TEST(Sweep, AggregateIsDerivableFromTraces) {
  const ExperimentConfig c = small_config();
  const SweepResult r = run_sweep(build_problem(c.problem), c);
  std::size_t row = 0;
  for (std::size_t b = 0; b < r.summaries.size(); ++b) {
    const std::size_t records = r.cells[b * 3].trace.records.size();
    for (std::size_t k = 0; k < records; ++k, ++row) {
      std::vector<double> v;
      for (std::size_t j = 0; j < 3; ++j) v.push_back(r.cells[b * 3 + j].trace.records[k].loss);
      const double mean = pairwise_sum(v) / 3.0;
      EXPECT_EQ(r.aggregate[row].mean_loss, mean);
      EXPECT_EQ(r.aggregate[row].iteration, r.cells[b * 3].trace.records[k].iteration);
      double ss = 0.0;
      for (double x : v) ss += (x - mean) * (x - mean);
      EXPECT_NEAR(r.aggregate[row].stderr_loss, std::sqrt(ss / 2.0 / 3.0), 1e-14 * mean);
    }
    if (r.summaries[b].iterations_to_target) {
      const auto first = std::find_if(r.aggregate.begin(), r.aggregate.end(), [&](const AggregateRow& a) {
        return a.m == r.summaries[b].m && a.mean_loss <= *r.target;
      });
      EXPECT_EQ(first->iteration, *r.summaries[b].iterations_to_target);
    }
  }
  EXPECT_EQ(row, r.aggregate.size());
}

TEST(Sweep, EpochBudgetScalesIterations) {
  ExperimentConfig c = small_config();
  c.max_epochs = 10.0;
  const SweepResult r = run_sweep(build_problem(c.problem), c);
  for (const auto& s : r.summaries) EXPECT_EQ(s.iterations, (10 * 16 + s.m - 1) / s.m);
}

TEST(Sweep, IndependentOfThreadCount) {
  const int saved = max_threads();
  const ExperimentConfig c = small_config();
  const QuadraticProblem p = build_problem(c.problem);
  set_threads(1);
  const SweepResult a = run_sweep(p, c);
  set_threads(4);
  const SweepResult b = run_sweep(p, c);
  set_threads(saved);
  ASSERT_EQ(a.aggregate.size(), b.aggregate.size());
  for (std::size_t i = 0; i < a.aggregate.size(); ++i) {
    EXPECT_EQ(a.aggregate[i].mean_loss, b.aggregate[i].mean_loss);
    EXPECT_EQ(a.aggregate[i].stderr_loss, b.aggregate[i].stderr_loss);
  }
}

TEST(Sweep, RepeatedRunWritesIdenticalFiles) {
  ExperimentConfig c = small_config();
  c.trials = 1;
  const QuadraticProblem p = build_problem(c.problem);
  const fs::path a = fresh_dir("a"), b = fresh_dir("b");
  write_sweep(run_sweep(p, c), c, p, a);
  write_sweep(run_sweep(p, c), c, p, b);
  std::size_t files = 0;
  for (const auto& entry : fs::recursive_directory_iterator(a)) {
    if (!entry.is_regular_file()) continue;
    ++files;
    EXPECT_EQ(slurp(entry.path()), slurp(b / fs::relative(entry.path(), a))) << entry.path();
  }
  EXPECT_EQ(files, 4u + 3u);
  EXPECT_TRUE(fs::exists(a / "traces" / "m8_trial0.csv"));
  const std::string header = slurp(a / "aggregate.csv").substr(0, 34);
  EXPECT_EQ(header, "m,iteration,epoch,mean_loss,stderr");
}

TEST(Sweep, UnwritableDirectoryIsIoError) {
  ExperimentConfig c = small_config();
  c.trials = 1;
  const QuadraticProblem p = build_problem(c.problem);
  const fs::path blocker = fresh_dir("blocker");
  fs::create_directories(blocker.parent_path());
  std::ofstream(blocker) << "file";
  EXPECT_THROW(write_sweep(run_sweep(p, c), c, p, blocker / "out"), IoError);
}

// Twice the lambda_k-free step overshoots the convergence boundary for m >= 2 on a kernel instance.
TEST(Sweep, DoubledHatStepDivergesOnKernelInstance) {
  const RowMatrix pts = gaussian_matrix(64, 3, 50);
  const QuadraticProblem p =
      kernel_problem(pts, gaussian_matrix(64, 1, 51), KernelSpec{KernelFamily::Gaussian, 2.0});
  ASSERT_GT(p.spectral().lambda1(), p.beta() / 64.0);
  ExperimentConfig c;
  c.problem.kind = ProblemKind::Kernel;
  c.batch_sizes = {4, 16};
  c.step.kind = StepKind::Hat;
  c.step.multiplier = 2.0;
  c.trials = 4;
  c.max_iterations = 5000;
  c.seed = 52;
  const SweepResult r = run_sweep(p, c);
  for (const auto& s : r.summaries) {
    EXPECT_GT(s.step_size, eta1(static_cast<double>(s.m), p.rate_params()));
    EXPECT_EQ(s.diverged, 4) << "m=" << s.m;
  }
  for (const auto& cell : r.cells) EXPECT_EQ(cell.trace.status, RunStatus::Diverged);
  EXPECT_GT(r.aggregate.back().mean_loss, 1e12 * r.initial_loss);
}

TEST(Analyze, TightnessExportRecoversFlatSpectrum) {
  const QuadraticProblem p = tightness_instance(8, 1.0, 1);
  const AnalyzeReport r = analyze(p);
  EXPECT_EQ(r.n, 8);
  EXPECT_EQ(r.beta, 1.0);
  EXPECT_NEAR(r.lambda1, 0.125, 1e-15);
  EXPECT_EQ(r.lambda1, r.lambdak);
  EXPECT_TRUE(r.m_star.unbounded);
  EXPECT_TRUE(r.eta_hat.empty());
  EXPECT_NE(to_json(r).find("\"unbounded\""), std::string::npos);
}

TEST(Analyze, HatStepsListedUpToCriticalBatch) {
  ProblemSpec s;
  s.kind = ProblemKind::Spectrum;
  s.n = 64;
  s.top_eigenvalue = 0.1;
  s.bulk_mass = 0.9;
  const QuadraticProblem p = build_problem(s);
  const AnalyzeReport r = analyze(p);
  ASSERT_FALSE(r.m_star.unbounded);
  ASSERT_EQ(static_cast<std::int64_t>(r.eta_hat.size()), r.m_star.recommended);
  for (std::size_t i = 0; i < r.eta_hat.size(); ++i)
    EXPECT_EQ(r.eta_hat[i], hat_step(static_cast<double>(i + 1), p.rate_params()));
}

TEST(RatesCsv, HeaderAndEmptyHatCells) {
  const std::vector<std::int64_t> grid{1, 2};
  std::ostringstream with, without;
  write_rates_csv(with, rate_table(grid, QuadraticRateParams(1.0, 0.15, 1e-4, 10000)));
  write_rates_csv(without, rate_table(grid, QuadraticRateParams(1.0, 0.15, 1e-4)));
  EXPECT_EQ(with.str().substr(0, with.str().find('\n')), "m,eta_star,g_star,eta_hat,g_hat,s,efficiency,regime");
  EXPECT_NE(without.str().find("1,1,0.9999,,,1,"), std::string::npos) << without.str();
  EXPECT_NE(rates_summary_json(QuadraticRateParams(1.0, 0.15, 1e-4, 10000)).find("\"m_star_recommended\": 8"),
            std::string::npos);
}

}  // namespace
}  // namespace mbsgd
