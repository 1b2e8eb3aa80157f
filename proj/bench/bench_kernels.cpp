#include "mbsgd/oracle.hpp"
#include "mbsgd/parallel.hpp"
#include "mbsgd/problems.hpp"
#include "mbsgd/rng.hpp"

#include <benchmark/benchmark.h>

namespace {

const mbsgd::QuadraticProblem& enum_problem() {
  static const mbsgd::QuadraticProblem p = mbsgd::random_interpolated_quadratic(4, 6, mbsgd::UniformNorms{}, 11);
  return p;
}

const mbsgd::QuadraticProblem& mc_problem() {
  static const mbsgd::QuadraticProblem p = mbsgd::random_interpolated_quadratic(64, 32, mbsgd::UniformNorms{}, 12);
  return p;
}

// 4^(2*5) = 2^20 index sequences.
void BM_EnumerateSerial(benchmark::State& state) {
  const auto& p = enum_problem();
  const Eigen::MatrixXd delta0 = mbsgd::gaussian_matrix(p.dim(), 1, 5);
  for (auto _ : state) benchmark::DoNotOptimize(mbsgd::serial::enumerate_expected_error(p, 2, 0.5, delta0, 5));
}
BENCHMARK(BM_EnumerateSerial)->Unit(benchmark::kMillisecond);

void BM_EnumerateParallel(benchmark::State& state) {
  mbsgd::set_threads(static_cast<int>(state.range(0)));
  const auto& p = enum_problem();
  const Eigen::MatrixXd delta0 = mbsgd::gaussian_matrix(p.dim(), 1, 5);
  for (auto _ : state) benchmark::DoNotOptimize(mbsgd::enumerate_expected_error(p, 2, 0.5, delta0, 5));
}
BENCHMARK(BM_EnumerateParallel)->RangeMultiplier(2)->Range(1, 8)->Unit(benchmark::kMillisecond)->UseRealTime();

void BM_MonteCarloSerial(benchmark::State& state) {
  const auto& p = mc_problem();
  const Eigen::MatrixXd delta0 = mbsgd::gaussian_matrix(p.dim(), 1, 6);
  for (auto _ : state)
    benchmark::DoNotOptimize(mbsgd::serial::mc_expected_error(p, 4, 1.0, delta0, 200, 2000, 7).mean);
}
BENCHMARK(BM_MonteCarloSerial)->Unit(benchmark::kMillisecond);

void BM_MonteCarloParallel(benchmark::State& state) {
  mbsgd::set_threads(static_cast<int>(state.range(0)));
  const auto& p = mc_problem();
  const Eigen::MatrixXd delta0 = mbsgd::gaussian_matrix(p.dim(), 1, 6);
  for (auto _ : state) benchmark::DoNotOptimize(mbsgd::mc_expected_error(p, 4, 1.0, delta0, 200, 2000, 7).mean);
}
BENCHMARK(BM_MonteCarloParallel)->RangeMultiplier(2)->Range(1, 8)->Unit(benchmark::kMillisecond)->UseRealTime();

}  // namespace

BENCHMARK_MAIN();
