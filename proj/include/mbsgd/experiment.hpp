#pragma once

#include "mbsgd/engine.hpp"
#include "mbsgd/problems.hpp"
#include "mbsgd/rates.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace mbsgd {

enum class ProblemKind { Tightness, Random, Spectrum, Kernel, Linear };

ProblemKind parse_problem_kind(const std::string& name);
const char* to_string(ProblemKind k) noexcept;

struct ProblemSpec {
  ProblemKind kind = ProblemKind::Tightness;
  std::int64_t n = 32;
  std::int64_t d = 32;
  /// tightness: the common squared row norm
  double beta = 1.0;
  /// random: "uniform" (row norms in [norm_lo, norm_hi]) or "decaying" (variance (j+1)^-exponent)
  std::string profile = "uniform";
  double norm_lo = 0.5;
  double norm_hi = 1.0;
  double exponent = 1.0;
  /// spectrum: explicit eigenvalues, or top_count copies of top_eigenvalue plus bulk_mass spread
  /// evenly over the remaining n - top_count directions (n a power of two)
  std::vector<double> eigenvalues;
  double top_eigenvalue = 0.1;
  std::int64_t top_count = 1;
  double bulk_mass = 0.9;
  /// kernel / linear: CSV dataset
  std::string data_path;
  std::vector<std::string> label_columns;
  bool one_hot = false;
  KernelSpec kernel;
  std::uint64_t seed = 0;
};

enum class StepKind { Optimal, Hat, Explicit };

StepKind parse_step_kind(const std::string& name);
const char* to_string(StepKind k) noexcept;

struct StepSpec {
  StepKind kind = StepKind::Optimal;
  double eta = 0.0;         // explicit
  double multiplier = 1.0;  // scales the optimal or hat step

  /// Policy for the engine; the multiplier is folded into explicit steps per batch size.
  StepPolicy policy(std::int64_t m, const QuadraticRateParams& params) const;
};

struct ExperimentConfig {
  ProblemSpec problem;
  std::vector<std::int64_t> batch_sizes{1};
  StepSpec step;
  std::int64_t trials = 1;
  std::int64_t max_iterations = 1000;
  /// When set, each batch size runs ceil(max_epochs * n / m) iterations instead.
  std::optional<double> max_epochs;
  /// Absolute target, or a fraction of the initial loss; used for the reach summary only.
  std::optional<double> target_loss;
  std::optional<double> target_ratio;
  /// 0 picks a stride giving about 200 records per run.
  std::int64_t trace_stride = 0;
  std::uint64_t seed = 0;
  bool range_only = true;
  bool write_traces = true;
  std::string output_dir = "sweep_out";

  /// Throws InputError on the first violated constraint.
  void validate() const;
};

/// Flat JSON object whose keys are the sweep flag names (so it replays through --config).
std::string to_json(const ExperimentConfig& config);

/// Builds the instance described by `spec`; dataset problems report warnings.
QuadraticProblem build_problem(const ProblemSpec& spec, std::vector<std::string>* warnings = nullptr);

struct SweepCell {
  std::int64_t m = 1;
  std::int64_t trial = 0;
  std::uint64_t seed = 0;
  Trace trace;
};

struct AggregateRow {
  std::int64_t m = 1;
  std::int64_t iteration = 0;
  double epoch = 0.0;
  double mean_loss = 0.0;
  double stderr_loss = 0.0;
};

struct BatchSummary {
  std::int64_t m = 1;
  double step_size = 0.0;
  std::int64_t iterations = 0;
  std::int64_t diverged = 0;
  std::optional<std::int64_t> iterations_to_target;
  std::optional<double> epochs_to_target;
};

struct SweepResult {
  std::vector<SweepCell> cells;          // sorted by (m, trial)
  std::vector<AggregateRow> aggregate;   // sorted by (m, iteration)
  std::vector<BatchSummary> summaries;   // one per batch size, ascending m
  double initial_loss = 0.0;
  std::optional<double> target;
};

/// Runs every (m, trial) cell in parallel, batch sizes ascending. Cell seeds are derive_seed(seed, m, trial); all cells
/// share one initial error drawn from derive_seed(seed, 0). Runs are never cut short at the
/// target, and records missing after a divergence aggregate as +inf.
SweepResult run_sweep(const QuadraticProblem& problem, const ExperimentConfig& config);

/// Writes aggregate.csv, cells.csv, summary.json, config.json and (optionally) traces/m<m>_trial<j>.csv.
void write_sweep(const SweepResult& result, const ExperimentConfig& config, const QuadraticProblem& problem,
                 const std::filesystem::path& dir);

void write_trace_csv(std::ostream& out, const Trace& trace);
void write_aggregate_csv(std::ostream& out, const std::vector<AggregateRow>& rows);

struct AnalyzeReport {
  std::int64_t n = 0;
  std::int64_t d = 0;
  double beta = 0.0;
  double lambda1 = 0.0;
  double lambdak = 0.0;
  std::int64_t k = 0;
  CriticalBatch m_star;
  /// hat_step(m) for m = 1..round(m*) (capped at max_listed); empty when undefined
  std::vector<double> eta_hat;
};

AnalyzeReport analyze(const QuadraticProblem& problem, std::int64_t max_listed = 1024);
std::string to_json(const AnalyzeReport& report, const std::vector<std::string>& warnings = {});

/// Header m,eta_star,g_star,eta_hat,g_hat,s,efficiency,regime; undefined hat cells are empty.
void write_rates_csv(std::ostream& out, const std::vector<RatePoint>& rows);
std::string rates_summary_json(const QuadraticRateParams& params);

/// "1,2,8" or ranges "1:64" (step 1) and "1:1024:x2" (geometric). Duplicates are an InputError.
std::vector<std::int64_t> parse_batch_grid(const std::string& text);

}  // namespace mbsgd
