#include "mbsgd/experiment.hpp"

#include "mbsgd/csv.hpp"
#include "mbsgd/error.hpp"
#include "mbsgd/parallel.hpp"
#include "mbsgd/rng.hpp"
#include "parallel_for.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

namespace mbsgd {
namespace {

using Json = nlohmann::ordered_json;

Json optional_number(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  return out;
}

void finish(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

std::int64_t parse_int(std::string_view token, const std::string& context) {
  while (!token.empty() && token.front() == ' ') token.remove_prefix(1);
  while (!token.empty() && token.back() == ' ') token.remove_suffix(1);
  std::int64_t v = 0;
  const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
  if (ec != std::errc() || ptr != token.data() + token.size())
    throw InputError("invalid integer '" + std::string(token) + "' in " + context);
  return v;
}

}  // namespace

ProblemKind parse_problem_kind(const std::string& name) {
  static const std::map<std::string, ProblemKind> kinds{{"tightness", ProblemKind::Tightness},
                                                        {"random", ProblemKind::Random},
                                                        {"spectrum", ProblemKind::Spectrum},
                                                        {"kernel", ProblemKind::Kernel},
                                                        {"linear", ProblemKind::Linear}};
  const auto it = kinds.find(name);
  if (it == kinds.end())
    throw InputError("unknown problem kind '" + name + "' (expected tightness, random, spectrum, kernel or linear)");
  return it->second;
}

const char* to_string(ProblemKind k) noexcept {
  switch (k) {
    case ProblemKind::Tightness: return "tightness";
    case ProblemKind::Random: return "random";
    case ProblemKind::Spectrum: return "spectrum";
    case ProblemKind::Kernel: return "kernel";
    case ProblemKind::Linear: return "linear";
  }
  return "unknown";
}

StepKind parse_step_kind(const std::string& name) {
  if (name == "optimal") return StepKind::Optimal;
  if (name == "hat") return StepKind::Hat;
  if (name == "explicit") return StepKind::Explicit;
  throw InputError("unknown step policy '" + name + "' (expected optimal, hat or explicit)");
}

const char* to_string(StepKind k) noexcept {
  switch (k) {
    case StepKind::Optimal: return "optimal";
    case StepKind::Hat: return "hat";
    case StepKind::Explicit: return "explicit";
  }
  return "unknown";
}

StepPolicy StepSpec::policy(std::int64_t m, const QuadraticRateParams& params) const {
  if (!(multiplier > 0.0) || !std::isfinite(multiplier)) throw InputError("step multiplier must be positive");
  switch (kind) {
    case StepKind::Explicit: return ExplicitStep{eta};
    case StepKind::Hat: return HatStep{multiplier};
    case StepKind::Optimal:
      if (multiplier == 1.0) return OptimalStep{};
      return ExplicitStep{multiplier * optimal_step(static_cast<double>(m), params)};
  }
  return OptimalStep{};
}

void ExperimentConfig::validate() const {
  if (batch_sizes.empty()) throw InputError("at least one batch size is required");
  std::set<std::int64_t> seen;
  for (auto m : batch_sizes) {
    if (m < 1) throw InputError("batch sizes must be >= 1");
    if (!seen.insert(m).second) throw InputError("batch sizes must be distinct (repeated " + std::to_string(m) + ")");
  }
  if (trials < 1) throw InputError("trials must be >= 1");
  if (max_iterations < 0) throw InputError("max iterations must be >= 0");
  if (max_epochs && !(*max_epochs > 0.0 && std::isfinite(*max_epochs))) throw InputError("max epochs must be positive");
  if (target_loss && !(*target_loss >= 0.0)) throw InputError("target loss must be non-negative");
  if (target_ratio && !(*target_ratio > 0.0 && *target_ratio < 1.0)) throw InputError("target ratio must be in (0, 1)");
  if (target_loss && target_ratio) throw InputError("give either a target loss or a target ratio, not both");
  if (trace_stride < 0) throw InputError("trace stride must be >= 0");
  if (!(step.multiplier > 0.0) || !std::isfinite(step.multiplier)) throw InputError("step multiplier must be positive");
  if (step.kind == StepKind::Explicit && !(step.eta > 0.0 && std::isfinite(step.eta)))
    throw InputError("an explicit step policy needs a positive eta");
}

std::string to_json(const ExperimentConfig& c) {
  const ProblemSpec& p = c.problem;
  Json j;
  j["problem"] = to_string(p.kind);
  j["n"] = p.n;
  j["d"] = p.d;
  j["beta"] = p.beta;
  j["profile"] = p.profile;
  j["norm-lo"] = p.norm_lo;
  j["norm-hi"] = p.norm_hi;
  j["exponent"] = p.exponent;
  if (!p.eigenvalues.empty()) j["eigenvalues"] = p.eigenvalues;
  j["top-eigenvalue"] = p.top_eigenvalue;
  j["top-count"] = p.top_count;
  j["bulk-mass"] = p.bulk_mass;
  if (!p.data_path.empty()) j["data"] = p.data_path;
  if (!p.label_columns.empty()) j["label-cols"] = p.label_columns;
  j["one-hot"] = p.one_hot;
  j["kernel"] = to_string(p.kernel.family);
  j["sigma"] = p.kernel.sigma;
  j["problem-seed"] = p.seed;
  j["m"] = c.batch_sizes;
  j["step"] = to_string(c.step.kind);
  if (c.step.kind == StepKind::Explicit) j["eta"] = c.step.eta;
  j["multiplier"] = c.step.multiplier;
  j["trials"] = c.trials;
  j["iterations"] = c.max_iterations;
  if (c.max_epochs) j["epochs"] = *c.max_epochs;
  if (c.target_loss) j["target-loss"] = *c.target_loss;
  if (c.target_ratio) j["target-ratio"] = *c.target_ratio;
  j["stride"] = c.trace_stride;
  j["seed"] = c.seed;
  j["raw-start"] = !c.range_only;
  j["no-traces"] = !c.write_traces;
  j["out"] = c.output_dir;
  return j.dump(2) + "\n";
}

QuadraticProblem build_problem(const ProblemSpec& spec, std::vector<std::string>* warnings) {
  switch (spec.kind) {
    case ProblemKind::Tightness:
      return tightness_instance(spec.n, spec.beta, spec.seed);
    case ProblemKind::Random: {
      SpectrumProfile profile;
      if (spec.profile == "uniform") profile = UniformNorms{spec.norm_lo, spec.norm_hi};
      else if (spec.profile == "decaying") profile = Decaying{spec.exponent};
      else throw InputError("unknown profile '" + spec.profile + "' (expected uniform or decaying)");
      return random_interpolated_quadratic(spec.n, spec.d, profile, spec.seed);
    }
    case ProblemKind::Spectrum: {
      std::vector<double> eig = spec.eigenvalues;
      if (eig.empty()) {
        if (spec.top_count < 1 || spec.top_count > spec.n) throw InputError("top count must lie in [1, n]");
        if (!(spec.top_eigenvalue > 0.0) || !(spec.bulk_mass >= 0.0))
          throw InputError("top eigenvalue must be positive and bulk mass non-negative");
        eig.assign(static_cast<std::size_t>(spec.n), 0.0);
        const std::int64_t rest = spec.n - spec.top_count;
        for (std::int64_t i = 0; i < spec.n; ++i)
          eig[static_cast<std::size_t>(i)] =
              i < spec.top_count ? spec.top_eigenvalue : spec.bulk_mass / static_cast<double>(rest);
      }
      return flat_norm_instance(eig, spec.seed);
    }
    case ProblemKind::Kernel:
    case ProblemKind::Linear: {
      if (spec.data_path.empty()) throw InputError("a dataset path is required for kernel and linear problems");
      if (spec.label_columns.empty()) throw InputError("at least one label column is required");
      Dataset data = load_csv(spec.data_path, spec.label_columns);
      Eigen::MatrixXd labels = data.labels;
      if (spec.one_hot) {
        if (labels.cols() != 1) throw InputError("one-hot encoding needs exactly one label column");
        labels = one_hot(labels.col(0));
      }
      if (spec.kind == ProblemKind::Kernel) return kernel_problem(data.points, labels, spec.kernel, warnings);
      return linear_problem(data.points, labels, warnings);
    }
  }
  throw InputError("unknown problem kind");
}

SweepResult run_sweep(const QuadraticProblem& problem, const ExperimentConfig& config) {
  config.validate();
  const QuadraticRateParams params = problem.rate_params();
  std::vector<std::int64_t> grid = config.batch_sizes;
  std::sort(grid.begin(), grid.end());

  const Eigen::MatrixXd delta0 =
      initial_error(problem, GaussianStart{derive_seed(config.seed, 0), config.range_only});
  const double n = static_cast<double>(problem.samples());

  SweepResult result;
  result.initial_loss = (delta0.transpose() * problem.covariance().matrix() * delta0).trace();
  if (config.target_loss) result.target = *config.target_loss;
  if (config.target_ratio) result.target = *config.target_ratio * result.initial_loss;

  std::vector<SGDConfig> runs;
  for (auto m : grid) {
    SGDConfig run;
    run.batch_size = m;
    run.step = ExplicitStep{resolve_step(config.step.policy(m, params), m, params)};
    run.max_iterations = config.max_epochs
                             ? static_cast<std::int64_t>(std::ceil(*config.max_epochs * n / static_cast<double>(m)))
                             : config.max_iterations;
    run.trace_stride = config.trace_stride > 0 ? config.trace_stride : std::max<std::int64_t>(1, run.max_iterations / 200);
    run.initial = delta0;
    runs.push_back(run);
  }

  const auto trials = config.trials;
  result.cells.resize(grid.size() * static_cast<std::size_t>(trials));
  detail::parallel_for(static_cast<std::int64_t>(result.cells.size()), [&](std::int64_t idx) {
    const auto b = static_cast<std::size_t>(idx / trials);
    const std::int64_t trial = idx % trials;
    SGDConfig run = runs[b];
    run.rng_seed = derive_seed(config.seed, static_cast<std::uint64_t>(grid[b]), static_cast<std::uint64_t>(trial));
    SweepCell& cell = result.cells[static_cast<std::size_t>(idx)];
    cell.m = grid[b];
    cell.trial = trial;
    cell.seed = run.rng_seed;
    cell.trace = sgd_run_quadratic(problem, run);
  });

  for (std::size_t b = 0; b < grid.size(); ++b) {
    const auto first = result.cells.begin() + static_cast<std::ptrdiff_t>(b * static_cast<std::size_t>(trials));
    const std::span<const SweepCell> cells(&*first, static_cast<std::size_t>(trials));
    BatchSummary summary;
    summary.m = grid[b];
    summary.step_size = cells.front().trace.step_size;
    summary.iterations = runs[b].max_iterations;
    const Trace* longest = &cells.front().trace;
    for (const auto& c : cells) {
      if (c.trace.status == RunStatus::Diverged) ++summary.diverged;
      if (c.trace.records.size() > longest->records.size()) longest = &c.trace;
    }
    std::vector<double> values(cells.size());
    for (std::size_t r = 0; r < longest->records.size(); ++r) {
      for (std::size_t j = 0; j < cells.size(); ++j) {
        const auto& recs = cells[j].trace.records;
        values[j] = r < recs.size() ? recs[r].loss : std::numeric_limits<double>::infinity();
      }
      AggregateRow row;
      row.m = grid[b];
      row.iteration = longest->records[r].iteration;
      row.epoch = longest->records[r].epoch;
      const auto count = static_cast<double>(values.size());
      row.mean_loss = pairwise_sum(values) / count;
      if (values.size() > 1 && std::isfinite(row.mean_loss)) {
        std::vector<double> sq(values.size());
        for (std::size_t j = 0; j < values.size(); ++j) sq[j] = (values[j] - row.mean_loss) * (values[j] - row.mean_loss);
        row.stderr_loss = std::sqrt(pairwise_sum(sq) / (count - 1.0) / count);
      } else if (!std::isfinite(row.mean_loss)) {
        row.stderr_loss = std::numeric_limits<double>::infinity();
      }
      if (result.target && !summary.iterations_to_target && row.mean_loss <= *result.target) {
        summary.iterations_to_target = row.iteration;
        summary.epochs_to_target = row.epoch;
      }
      result.aggregate.push_back(row);
    }
    result.summaries.push_back(summary);
  }
  return result;
}

void write_trace_csv(std::ostream& out, const Trace& trace) {
  out << "iteration,epoch,loss,range_error,null_error\n";
  for (const auto& r : trace.records)
    out << r.iteration << ',' << format_double(r.epoch) << ',' << format_double(r.loss) << ','
        << format_double(r.range_error) << ',' << format_double(r.null_error) << '\n';
}

void write_aggregate_csv(std::ostream& out, const std::vector<AggregateRow>& rows) {
  out << "m,iteration,epoch,mean_loss,stderr\n";
  for (const auto& r : rows)
    out << r.m << ',' << r.iteration << ',' << format_double(r.epoch) << ',' << format_double(r.mean_loss) << ','
        << format_double(r.stderr_loss) << '\n';
}

void write_sweep(const SweepResult& result, const ExperimentConfig& config, const QuadraticProblem& problem,
                 const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
  if (config.write_traces) {
    std::filesystem::create_directories(dir / "traces", ec);
    if (ec) throw IoError("cannot create directory '" + (dir / "traces").string() + "': " + ec.message());
    for (const auto& cell : result.cells) {
      const auto path = dir / "traces" / ("m" + std::to_string(cell.m) + "_trial" + std::to_string(cell.trial) + ".csv");
      auto out = open_output(path);
      write_trace_csv(out, cell.trace);
      finish(out, path);
    }
  }
  {
    const auto path = dir / "aggregate.csv";
    auto out = open_output(path);
    write_aggregate_csv(out, result.aggregate);
    finish(out, path);
  }
  {
    const auto path = dir / "cells.csv";
    auto out = open_output(path);
    out << "m,trial,seed,step_size,status,final_iteration,final_loss\n";
    for (const auto& c : result.cells) {
      const auto& last = c.trace.records.back();
      out << c.m << ',' << c.trial << ',' << c.seed << ',' << format_double(c.trace.step_size) << ','
          << to_string(c.trace.status) << ',' << last.iteration << ',' << format_double(last.loss) << '\n';
    }
    finish(out, path);
  }
  {
    const SpectralSummary& s = problem.spectral();
    const CriticalBatch cb = critical_batch(problem.rate_params());
    Json j;
    j["problem"] = {{"kind", to_string(config.problem.kind)},
                    {"n", problem.samples()},
                    {"d", problem.dim()},
                    {"outputs", problem.outputs()},
                    {"beta", problem.beta()},
                    {"lambda1", s.lambda1()},
                    {"lambdak", s.lambdak()},
                    {"k", s.rank()}};
    j["m_star"] = cb.unbounded ? Json("unbounded") : Json(cb.value);
    j["m_star_recommended"] = cb.unbounded ? Json(nullptr) : Json(cb.recommended);
    j["initial_loss"] = result.initial_loss;
    j["target"] = optional_number(result.target);
    Json batches = Json::array();
    for (const auto& b : result.summaries) {
      batches.push_back({{"m", b.m},
                         {"step_size", b.step_size},
                         {"iterations", b.iterations},
                         {"diverged", b.diverged},
                         {"iterations_to_target",
                          b.iterations_to_target ? Json(*b.iterations_to_target) : Json(nullptr)},
                         {"epochs_to_target", optional_number(b.epochs_to_target)}});
    }
    j["batches"] = batches;
    const auto path = dir / "summary.json";
    auto out = open_output(path);
    out << j.dump(2) << '\n';
    finish(out, path);
  }
  {
    const auto path = dir / "config.json";
    auto out = open_output(path);
    out << to_json(config);
    finish(out, path);
  }
}

AnalyzeReport analyze(const QuadraticProblem& problem, std::int64_t max_listed) {
  const SpectralSummary& s = problem.spectral();
  const QuadraticRateParams params = problem.rate_params();
  AnalyzeReport r;
  r.n = problem.samples();
  r.d = problem.dim();
  r.beta = params.beta();
  r.lambda1 = params.lambda1();
  r.lambdak = params.lambdak();
  r.k = s.rank();
  r.m_star = critical_batch(params);
  if (params.lambda1() > params.beta() / static_cast<double>(params.samples())) {
    const std::int64_t last =
        r.m_star.unbounded ? max_listed : std::clamp<std::int64_t>(r.m_star.recommended, 1, max_listed);
    for (std::int64_t m = 1; m <= last; ++m) r.eta_hat.push_back(hat_step(static_cast<double>(m), params));
  }
  return r;
}

std::string to_json(const AnalyzeReport& r, const std::vector<std::string>& warnings) {
  Json j;
  j["n"] = r.n;
  j["d"] = r.d;
  j["beta"] = r.beta;
  j["lambda1"] = r.lambda1;
  j["lambdak"] = r.lambdak;
  j["k"] = r.k;
  j["m_star"] = r.m_star.unbounded ? Json("unbounded") : Json(r.m_star.value);
  j["m_star_recommended"] = r.m_star.unbounded ? Json(nullptr) : Json(r.m_star.recommended);
  j["eta_hat"] = r.eta_hat;
  j["warnings"] = warnings;
  return j.dump(2) + "\n";
}

void write_rates_csv(std::ostream& out, const std::vector<RatePoint>& rows) {
  out << "m,eta_star,g_star,eta_hat,g_hat,s,efficiency,regime\n";
  for (const auto& r : rows) {
    out << r.m << ',' << format_double(r.eta_star) << ',' << format_double(r.g_star) << ','
        << (r.eta_hat ? format_double(*r.eta_hat) : "") << ',' << (r.g_hat ? format_double(*r.g_hat) : "") << ','
        << format_double(r.speedup) << ',' << format_double(r.efficiency) << ',' << to_string(r.regime) << '\n';
  }
}

std::string rates_summary_json(const QuadraticRateParams& p) {
  const CriticalBatch cb = critical_batch(p);
  Json j;
  j["beta"] = p.beta();
  j["lambda1"] = p.lambda1();
  j["lambdak"] = p.lambdak();
  j["n"] = p.samples();
  j["m_star"] = cb.unbounded ? Json("unbounded") : Json(cb.value);
  j["m_star_recommended"] = cb.unbounded ? Json(nullptr) : Json(cb.recommended);
  const double limit = speedup_limit(p);
  j["speedup_limit"] = std::isfinite(limit) ? Json(limit) : Json("unbounded");
  j["hat_assumption"] = p.samples() > 0 ? Json(hat_assumption_holds(p)) : Json(nullptr);
  return j.dump(2) + "\n";
}

std::vector<std::int64_t> parse_batch_grid(const std::string& text) {
  std::vector<std::int64_t> out;
  std::set<std::int64_t> seen;
  auto add = [&](std::int64_t m) {
    if (m < 1) throw InputError("batch sizes must be >= 1");
    if (!seen.insert(m).second) throw InputError("batch size " + std::to_string(m) + " appears twice");
    out.push_back(m);
  };
  std::stringstream ss(text);
  std::string token;
  while (std::getline(ss, token, ',')) {
    if (token.find_first_not_of(' ') == std::string::npos) throw InputError("empty entry in batch grid '" + text + "'");
    const auto c1 = token.find(':');
    if (c1 == std::string::npos) {
      add(parse_int(token, "batch grid"));
      continue;
    }
    const auto c2 = token.find(':', c1 + 1);
    const std::int64_t lo = parse_int(std::string_view(token).substr(0, c1), "batch grid");
    const std::int64_t hi = parse_int(
        std::string_view(token).substr(c1 + 1, c2 == std::string::npos ? std::string::npos : c2 - c1 - 1), "batch grid");
    if (lo < 1 || hi < lo) throw InputError("invalid batch range '" + token + "'");
    if (c2 == std::string::npos) {
      for (std::int64_t m = lo; m <= hi; ++m) add(m);
      continue;
    }
    std::string_view step = std::string_view(token).substr(c2 + 1);
    if (!step.empty() && step.front() == 'x') {
      const std::int64_t factor = parse_int(step.substr(1), "batch grid");
      if (factor < 2) throw InputError("geometric factor must be >= 2 in '" + token + "'");
      for (std::int64_t m = lo; m <= hi; m *= factor) add(m);
    } else {
      const std::int64_t inc = parse_int(step, "batch grid");
      if (inc < 1) throw InputError("range step must be >= 1 in '" + token + "'");
      for (std::int64_t m = lo; m <= hi; m += inc) add(m);
    }
  }
  if (out.empty()) throw InputError("batch grid is empty");
  return out;
}

}  // namespace mbsgd
