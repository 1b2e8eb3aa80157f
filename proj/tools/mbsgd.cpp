#include "mbsgd/csv.hpp"
#include "mbsgd/error.hpp"
#include "mbsgd/experiment.hpp"
#include "mbsgd/parallel.hpp"
#include "mbsgd/rates.hpp"
#include "mbsgd/verify.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kVerifyFailed = 2;
constexpr int kIo = 3;

const char* const kSubcommands[] = {"rates", "sweep", "analyze", "verify"};

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(' ');
    const auto e = item.find_last_not_of(' ');
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

std::string scalar_text(const nlohmann::json& v, const std::string& key) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  if (v.is_number_unsigned()) return std::to_string(v.get<unsigned long long>());
  if (v.is_number_float()) return mbsgd::format_double(v.get<double>());
  throw mbsgd::InputError("config key '" + key + "' must hold a string, number or list of those");
}

/// Turns a flat JSON object into "--key value" arguments; booleans become bare flags.
std::vector<std::string> config_arguments(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw mbsgd::IoError("cannot open config file '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw mbsgd::InputError("config file '" + path + "' is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw mbsgd::InputError("config file '" + path + "' must hold a JSON object");
  std::vector<std::string> args;
  for (const auto& [key, value] : j.items()) {
    if (value.is_null()) continue;
    if (value.is_boolean()) {
      if (value.get<bool>()) args.push_back("--" + key);
      continue;
    }
    std::string text;
    if (value.is_array()) {
      for (std::size_t i = 0; i < value.size(); ++i) text += (i ? "," : "") + scalar_text(value[i], key);
    } else {
      text = scalar_text(value, key);
    }
    args.push_back("--" + key);
    args.push_back(text);
  }
  return args;
}

/// Places the arguments from --config right after the subcommand name, so that flags given on
/// the command line come later and win under the take-last policy.
std::vector<std::string> expand_config(std::vector<std::string> args) {
  std::optional<std::string> path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[i + 1];
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i + 2));
      break;
    }
    if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
      break;
    }
  }
  if (!path) return args;
  std::optional<std::size_t> at;
  for (std::size_t i = 1; i < args.size() && !at; ++i)
    for (const char* name : kSubcommands)
      if (args[i] == name) at = i + 1;
  if (!at) throw mbsgd::InputError("--config must follow a subcommand");
  const auto extra = config_arguments(*path);
  args.insert(args.begin() + static_cast<std::ptrdiff_t>(*at), extra.begin(), extra.end());
  return args;
}

void write_text(const std::string& path, const std::string& text) {
  if (path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path);
  if (!out) throw mbsgd::IoError("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw mbsgd::IoError("failed writing '" + path + "'");
}

std::string summary_path_for(const std::string& out) {
  const auto dot = out.find_last_of('.');
  const auto slash = out.find_last_of('/');
  const bool has_ext = dot != std::string::npos && (slash == std::string::npos || dot > slash);
  return (has_ext ? out.substr(0, dot) : out) + "_summary.json";
}

struct RatesArgs {
  double beta = 0.0, lambda1 = 0.0, lambdak = 0.0;
  std::int64_t n = 0;
  std::string grid = "1:1024:x2";
  std::string out = "-";
  std::string summary;
};

int run_rates(const RatesArgs& a) {
  const mbsgd::QuadraticRateParams params(a.beta, a.lambda1, a.lambdak, a.n);
  const auto grid = mbsgd::parse_batch_grid(a.grid);
  const auto rows = mbsgd::rate_table(grid, params);
  std::ostringstream csv;
  mbsgd::write_rates_csv(csv, rows);
  write_text(a.out, csv.str());
  const std::string summary = mbsgd::rates_summary_json(params);
  if (!a.summary.empty()) write_text(a.summary, summary);
  else if (a.out != "-") write_text(summary_path_for(a.out), summary);
  else std::cerr << summary;
  return kOk;
}

struct SweepArgs {
  mbsgd::ExperimentConfig config;
  std::string problem = "tightness";
  std::string profile = "uniform";
  std::string eigenvalues;
  std::string label_cols;
  std::string kernel = "gaussian";
  std::string grid = "1";
  std::string step = "optimal";
  double epochs = 0.0, target_loss = -1.0, target_ratio = 0.0;
  bool raw_start = false, no_traces = false;
};

int run_sweep(SweepArgs& a) {
  auto& c = a.config;
  c.problem.kind = mbsgd::parse_problem_kind(a.problem);
  c.problem.profile = a.profile;
  c.problem.eigenvalues.clear();
  for (const auto& v : split_list(a.eigenvalues)) {
    double x = 0.0;
    if (!mbsgd::parse_double(v, x)) throw mbsgd::InputError("invalid eigenvalue '" + v + "'");
    c.problem.eigenvalues.push_back(x);
  }
  c.problem.label_columns = split_list(a.label_cols);
  c.problem.kernel.family = mbsgd::parse_kernel_family(a.kernel);
  c.batch_sizes = mbsgd::parse_batch_grid(a.grid);
  c.step.kind = mbsgd::parse_step_kind(a.step);
  if (a.epochs > 0.0) c.max_epochs = a.epochs;
  if (a.target_loss >= 0.0) c.target_loss = a.target_loss;
  if (a.target_ratio > 0.0) c.target_ratio = a.target_ratio;
  c.range_only = !a.raw_start;
  c.write_traces = !a.no_traces;
  c.validate();

  std::vector<std::string> warnings;
  const mbsgd::QuadraticProblem problem = mbsgd::build_problem(c.problem, &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
  const mbsgd::SweepResult result = mbsgd::run_sweep(problem, c);
  mbsgd::write_sweep(result, c, problem, c.output_dir);

  std::cout << "m,step_size,iterations,diverged,iterations_to_target,epochs_to_target\n";
  for (const auto& s : result.summaries) {
    std::cout << s.m << ',' << mbsgd::format_double(s.step_size) << ',' << s.iterations << ',' << s.diverged << ','
              << (s.iterations_to_target ? std::to_string(*s.iterations_to_target) : "") << ','
              << (s.epochs_to_target ? mbsgd::format_double(*s.epochs_to_target) : "") << '\n';
  }
  return kOk;
}

struct AnalyzeArgs {
  std::string data;
  std::string label_cols;
  std::string kernel = "none";
  double sigma = 1.0;
  bool one_hot = false;
  std::string out = "-";
};

int run_analyze(const AnalyzeArgs& a) {
  const auto labels = split_list(a.label_cols);
  mbsgd::Dataset data = mbsgd::load_csv(a.data, labels);
  Eigen::MatrixXd y = data.labels;
  if (a.one_hot) {
    if (y.cols() != 1) throw mbsgd::InputError("--one-hot needs exactly one label column");
    y = mbsgd::one_hot(y.col(0));
  }
  // The spectrum does not depend on the labels; without any, zero targets interpolate trivially.
  if (y.cols() == 0) y = Eigen::MatrixXd::Zero(data.points.rows(), 1);
  std::vector<std::string> warnings;
  const mbsgd::QuadraticProblem problem =
      a.kernel == "none" ? mbsgd::linear_problem(data.points, y, &warnings)
                         : mbsgd::kernel_problem(data.points, y,
                                                 mbsgd::KernelSpec{mbsgd::parse_kernel_family(a.kernel), a.sigma},
                                                 &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
  write_text(a.out, mbsgd::to_json(mbsgd::analyze(problem), warnings));
  return kOk;
}

struct VerifyArgs {
  std::string level = "quick";
  std::uint64_t seed = 1;
  std::string json;
};

int run_verify(const VerifyArgs& a) {
  mbsgd::VerifyOptions options;
  options.level = mbsgd::parse_verify_level(a.level);
  options.seed = a.seed;
  const auto results = mbsgd::run_verification(options);
  mbsgd::write_verification_table(std::cout, results);
  if (!a.json.empty()) write_text(a.json, mbsgd::verification_json(results, options));
  const bool ok = mbsgd::all_passed(results);
  std::cout << (ok ? "all checks passed\n" : "verification FAILED\n");
  return ok ? kOk : kVerifyFailed;
}

int default_threads() {
  const char* env = std::getenv("MBSGD_THREADS");
  if (env == nullptr || *env == '\0') return 0;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1) throw mbsgd::InputError(std::string("MBSGD_THREADS must be a positive integer, got '") + env + "'");
  return static_cast<int>(v);
}

int run(int argc, char** argv) {
  CLI::App app{"Mini-batch SGD rates, simulations and oracle checks in the interpolation regime", "mbsgd"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  int threads = default_threads();
  app.add_option("--threads", threads, "OpenMP threads (default: MBSGD_THREADS, else the OpenMP default)")
      ->check(CLI::PositiveNumber);
  const std::string config_help = "JSON object of option values; command-line flags override it";

  RatesArgs ra;
  auto* rates = app.add_subcommand("rates", "Rate table for given (beta, lambda1, lambdak, n)");
  rates->add_option("--config", config_help);
  rates->add_option("--beta", ra.beta, "max squared feature norm")->required();
  rates->add_option("--lambda1", ra.lambda1, "largest covariance eigenvalue")->required();
  rates->add_option("--lambdak", ra.lambdak, "smallest nonzero covariance eigenvalue")->required();
  rates->add_option("--n", ra.n, "sample count (enables the lambda_k-free step columns)");
  rates->add_option("--m-grid", ra.grid, "batch sizes, e.g. 1,2,8 or 1:64 or 1:1024:x2")->capture_default_str();
  rates->add_option("--out", ra.out, "CSV path, - for standard output")->capture_default_str();
  rates->add_option("--summary", ra.summary, "summary JSON path (default beside --out, or standard error)");

  SweepArgs sa;
  auto& sc = sa.config;
  auto* sweep = app.add_subcommand("sweep", "Seeded SGD runs over a batch-size grid");
  sweep->add_option("--config", config_help);
  sweep->add_option("--problem", sa.problem, "tightness | random | spectrum | kernel | linear")->capture_default_str();
  sweep->add_option("--n", sc.problem.n, "sample count")->capture_default_str();
  sweep->add_option("--d", sc.problem.d, "feature dimension (random)")->capture_default_str();
  sweep->add_option("--beta", sc.problem.beta, "squared row norm (tightness)")->capture_default_str();
  sweep->add_option("--profile", sa.profile, "uniform | decaying (random)")->capture_default_str();
  sweep->add_option("--norm-lo", sc.problem.norm_lo, "smallest row norm (random, uniform)")->capture_default_str();
  sweep->add_option("--norm-hi", sc.problem.norm_hi, "largest row norm (random, uniform)")->capture_default_str();
  sweep->add_option("--exponent", sc.problem.exponent, "variance decay exponent (random, decaying)")
      ->capture_default_str();
  sweep->add_option("--eigenvalues", sa.eigenvalues, "explicit covariance spectrum (spectrum)");
  sweep->add_option("--top-eigenvalue", sc.problem.top_eigenvalue, "leading eigenvalue (spectrum)")
      ->capture_default_str();
  sweep->add_option("--top-count", sc.problem.top_count, "multiplicity of the leading eigenvalue (spectrum)")
      ->capture_default_str();
  sweep->add_option("--bulk-mass", sc.problem.bulk_mass, "total of the remaining eigenvalues (spectrum)")
      ->capture_default_str();
  sweep->add_option("--data", sc.problem.data_path, "CSV dataset (kernel, linear)");
  sweep->add_option("--label-cols", sa.label_cols, "label column names or indices");
  sweep->add_flag("--one-hot", sc.problem.one_hot, "one-hot encode a single class column");
  sweep->add_option("--kernel", sa.kernel, "gaussian | laplace")->capture_default_str();
  sweep->add_option("--sigma", sc.problem.kernel.sigma, "kernel bandwidth")->capture_default_str();
  sweep->add_option("--problem-seed", sc.problem.seed, "seed of the instance generator")->capture_default_str();
  sweep->add_option("--m", sa.grid, "batch sizes, e.g. 1,8,64")->capture_default_str();
  sweep->add_option("--step", sa.step, "optimal | hat | explicit")->capture_default_str();
  sweep->add_option("--eta", sc.step.eta, "step size for --step explicit");
  sweep->add_option("--multiplier", sc.step.multiplier, "factor applied to the optimal or hat step")
      ->capture_default_str();
  sweep->add_option("--trials", sc.trials, "runs per batch size")->capture_default_str();
  sweep->add_option("--iterations", sc.max_iterations, "iterations per run")->capture_default_str();
  sweep->add_option("--epochs", sa.epochs, "epochs per run (overrides --iterations)");
  sweep->add_option("--target-loss", sa.target_loss, "absolute loss target for the reach summary");
  sweep->add_option("--target-ratio", sa.target_ratio, "loss target as a fraction of the initial loss");
  sweep->add_option("--stride", sc.trace_stride, "record every s-th iteration (0: about 200 records)")
      ->capture_default_str();
  sweep->add_option("--seed", sc.seed, "sampling and initial-error seed")->capture_default_str();
  sweep->add_flag("--raw-start", sa.raw_start, "keep the null-space part of the initial error");
  sweep->add_flag("--no-traces", sa.no_traces, "skip per-run trace files");
  sweep->add_option("--out", sc.output_dir, "output directory")->capture_default_str();

  AnalyzeArgs aa;
  auto* analyze = app.add_subcommand("analyze", "beta, spectrum and critical batch size of a CSV dataset");
  analyze->add_option("--config", config_help);
  analyze->add_option("--data", aa.data, "CSV dataset with a header row")->required();
  analyze->add_option("--label-cols", aa.label_cols, "label column names or indices");
  analyze->add_option("--kernel", aa.kernel, "none | gaussian | laplace")->capture_default_str();
  analyze->add_option("--sigma", aa.sigma, "kernel bandwidth")->capture_default_str();
  analyze->add_flag("--one-hot", aa.one_hot, "one-hot encode a single class column");
  analyze->add_option("--out", aa.out, "report path, - for standard output")->capture_default_str();

  VerifyArgs va;
  auto* verify = app.add_subcommand("verify", "Run the oracle verification suite");
  verify->add_option("--config", config_help);
  verify->add_option("--level", va.level, "quick | full")->capture_default_str();
  verify->add_option("--seed", va.seed, "suite seed")->capture_default_str();
  verify->add_option("--json", va.json, "write results as JSON");

  std::vector<std::string> args(argv, argv + argc);
  args = expand_config(std::move(args));
  std::vector<std::string> reversed(args.rbegin(), args.rend() - 1);
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }
  mbsgd::set_threads(threads);

  if (*rates) return run_rates(ra);
  if (*sweep) return run_sweep(sa);
  if (*analyze) return run_analyze(aa);
  return run_verify(va);
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const mbsgd::IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIo;
  } catch (const mbsgd::InvariantError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kVerifyFailed;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }
}
