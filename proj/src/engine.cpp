#include "mbsgd/engine.hpp"

#include "mbsgd/error.hpp"
#include "mbsgd/rng.hpp"

#include <cmath>
#include <limits>

namespace mbsgd {
namespace {

using RowMap = Eigen::Map<const RowMatrix>;

void validate(const SGDConfig& c) {
  if (c.batch_size < 1) throw InputError("batch size must be >= 1");
  if (c.max_iterations < 0) throw InputError("max_iterations must be >= 0");
  if (c.trace_stride < 1) throw InputError("trace_stride must be >= 1");
  if (!(c.divergence_factor > 0.0)) throw InputError("divergence_factor must be positive");
}

bool should_record(std::int64_t t, const SGDConfig& c) {
  return t % c.trace_stride == 0 || t == c.max_iterations;
}

/// Loss-based stopping shared by both runners; returns true when the run must end.
bool settle(Trace& trace, const TraceRecord& rec, double loss0, const SGDConfig& c) {
  // with loss0 == 0 only non-finite values count: round-off at w* would otherwise trip the ratio
  if (!std::isfinite(rec.loss) || (loss0 > 0.0 && rec.loss > c.divergence_factor * loss0)) {
    trace.status = RunStatus::Diverged;
    return true;
  }
  if (c.target_loss && rec.loss <= *c.target_loss) {
    trace.status = RunStatus::ReachedTarget;
    return true;
  }
  return false;
}

}  // namespace

const char* to_string(RunStatus s) noexcept {
  switch (s) {
    case RunStatus::ReachedTarget: return "reached-target";
    case RunStatus::ExhaustedBudget: return "exhausted-budget";
    case RunStatus::Diverged: return "diverged";
  }
  return "unknown";
}

double resolve_step(const StepPolicy& policy, std::int64_t m, const QuadraticRateParams& params) {
  const auto mm = static_cast<double>(m);
  double eta = 0.0;
  if (const auto* e = std::get_if<ExplicitStep>(&policy)) eta = e->eta;
  else if (std::holds_alternative<OptimalStep>(policy)) eta = optimal_step(mm, params);
  else {
    const auto& h = std::get<HatStep>(policy);
    if (!(h.multiplier > 0.0)) throw InputError("step multiplier must be positive");
    eta = h.multiplier * hat_step(mm, params);
  }
  if (!(eta > 0.0) || !std::isfinite(eta)) throw InputError("step size must be positive and finite");
  return eta;
}

double resolve_step(const StepPolicy& policy, std::int64_t m, const ConvexRateParams& params) {
  double eta = 0.0;
  if (const auto* e = std::get_if<ExplicitStep>(&policy)) eta = e->eta;
  else if (std::holds_alternative<OptimalStep>(policy)) eta = convex_step_size(static_cast<double>(m), params);
  else throw InputError("the lambda_k-free step size is defined for quadratic problems only");
  if (!(eta > 0.0) || !std::isfinite(eta)) throw InputError("step size must be positive and finite");
  return eta;
}

Eigen::MatrixXd initial_error(const QuadraticProblem& problem, const InitialError& init) {
  if (const auto* g = std::get_if<GaussianStart>(&init)) {
    Eigen::MatrixXd delta = gaussian_matrix(problem.dim(), problem.outputs(), g->seed);
    return g->range_only ? project_range(delta, problem.spectral()) : delta;
  }
  const auto& delta = std::get<Eigen::MatrixXd>(init);
  if (delta.rows() != problem.dim() || delta.cols() != problem.outputs())
    throw DimensionError("initial error must be d x outputs");
  if (!delta.allFinite()) throw InputError("initial error must be finite");
  return delta;
}

Trace sgd_run_quadratic(const QuadraticProblem& problem, const SGDConfig& config) {
  validate(config);
  const Eigen::Index n = problem.samples(), d = problem.dim(), c = problem.outputs();
  const std::int64_t m = config.batch_size;
  const double eta = resolve_step(config.step, m, problem.rate_params());

  const RowMatrix& x = problem.data().matrix();
  const RowMatrix y = problem.targets();
  const RowMatrix w_star = problem.minimizer();
  const Eigen::MatrixXd& h = problem.covariance().matrix();
  const Eigen::MatrixXd& basis = problem.spectral().eigenbasis;

  RowMatrix w = w_star + RowMatrix(initial_error(problem, config.initial));

  auto measure = [&](std::int64_t t) {
    const Eigen::MatrixXd delta = w - w_star;
    const Eigen::MatrixXd coords = basis.transpose() * delta;
    const Eigen::MatrixXd null_part = delta - basis * coords;
    TraceRecord r;
    r.iteration = t;
    r.epoch = static_cast<double>(t * m) / static_cast<double>(n);
    r.loss = (delta.transpose() * h * delta).trace();
    r.range_error = coords.squaredNorm();
    r.null_error = null_part.squaredNorm();
    return r;
  };

  Trace trace;
  trace.step_size = eta;
  trace.batch_size = m;
  trace.samples = n;
  trace.records.push_back(measure(0));
  const double loss0 = trace.records.front().loss;

  const CounterRng rng(config.rng_seed);
  std::vector<double> grad(static_cast<std::size_t>(d * c));
  std::vector<double> residual(static_cast<std::size_t>(c));
  double* wp = w.data();

  bool done = settle(trace, trace.records.back(), loss0, config);
  for (std::int64_t t = 0; t < config.max_iterations && !done; ++t) {
    std::fill(grad.begin(), grad.end(), 0.0);
    bool finite = true;
    auto accumulate = [&](Eigen::Index i) {
      const double* xi = x.data() + i * d;
      for (Eigen::Index k = 0; k < c; ++k) {
        double r = 0.0;
        for (Eigen::Index j = 0; j < d; ++j) r += xi[j] * wp[j * c + k];
        residual[static_cast<std::size_t>(k)] = r - y(i, k);
        finite = finite && std::isfinite(residual[static_cast<std::size_t>(k)]);
      }
      for (Eigen::Index j = 0; j < d; ++j)
        for (Eigen::Index k = 0; k < c; ++k)
          grad[static_cast<std::size_t>(j * c + k)] += residual[static_cast<std::size_t>(k)] * xi[j];
    };
    double scale = 0.0;
    if (config.full_gradient) {
      for (Eigen::Index i = 0; i < n; ++i) accumulate(i);
      scale = eta / static_cast<double>(n);
    } else {
      for (std::int64_t s = 0; s < m; ++s)
        accumulate(static_cast<Eigen::Index>(rng.index(static_cast<std::uint64_t>(t), static_cast<std::uint64_t>(s),
                                                       static_cast<std::uint64_t>(n))));
      scale = eta / static_cast<double>(m);
    }
    for (std::size_t j = 0; j < grad.size(); ++j) wp[j] -= scale * grad[j];

    const std::int64_t next = t + 1;
    if (!finite) {
      trace.records.push_back(measure(next));
      trace.status = RunStatus::Diverged;
      break;
    }
    if (should_record(next, config)) {
      trace.records.push_back(measure(next));
      done = settle(trace, trace.records.back(), loss0, config);
    }
  }
  trace.final_parameters = w;
  return trace;
}

Trace sgd_run_convex(const ConvexProblem& problem, const SGDConfig& config) {
  validate(config);
  const Eigen::Index n = problem.samples(), d = problem.dim();
  const std::int64_t m = config.batch_size;
  const double eta = resolve_step(config.step, m, problem.constants());

  Eigen::VectorXd w;
  if (const auto* g = std::get_if<GaussianStart>(&config.initial)) {
    w = problem.minimizer() + gaussian_matrix(d, 1, g->seed).col(0);
  } else {
    const auto& delta = std::get<Eigen::MatrixXd>(config.initial);
    if (delta.rows() != d || delta.cols() != 1) throw DimensionError("initial error must be d x 1");
    w = problem.minimizer() + delta.col(0);
  }
  const std::span<const double> wv(w.data(), static_cast<std::size_t>(d));

  auto measure = [&](std::int64_t t) {
    TraceRecord r;
    r.iteration = t;
    r.epoch = static_cast<double>(t * m) / static_cast<double>(n);
    r.loss = problem.empirical_loss(wv);
    r.range_error = std::numeric_limits<double>::quiet_NaN();
    r.null_error = std::numeric_limits<double>::quiet_NaN();
    return r;
  };

  Trace trace;
  trace.step_size = eta;
  trace.batch_size = m;
  trace.samples = n;
  trace.records.push_back(measure(0));
  const double loss0 = trace.records.front().loss;

  const CounterRng rng(config.rng_seed);
  Eigen::VectorXd grad(d);
  const std::span<double> gv(grad.data(), static_cast<std::size_t>(d));

  bool done = settle(trace, trace.records.back(), loss0, config);
  for (std::int64_t t = 0; t < config.max_iterations && !done; ++t) {
    grad.setZero();
    double scale = 0.0;
    if (config.full_gradient) {
      for (Eigen::Index i = 0; i < n; ++i) problem.add_gradient(i, wv, gv);
      scale = eta / static_cast<double>(n);
    } else {
      for (std::int64_t s = 0; s < m; ++s) {
        const auto i = static_cast<Eigen::Index>(
            rng.index(static_cast<std::uint64_t>(t), static_cast<std::uint64_t>(s), static_cast<std::uint64_t>(n)));
        problem.add_gradient(i, wv, gv);
      }
      scale = eta / static_cast<double>(m);
    }
    for (Eigen::Index j = 0; j < d; ++j) w(j) -= scale * grad(j);

    const std::int64_t next = t + 1;
    if (!grad.allFinite()) {
      trace.records.push_back(measure(next));
      trace.status = RunStatus::Diverged;
      break;
    }
    if (should_record(next, config)) {
      trace.records.push_back(measure(next));
      done = settle(trace, trace.records.back(), loss0, config);
    }
  }
  trace.final_parameters = w;
  return trace;
}

std::vector<CurvePoint> aggregate_traces(std::span<const Trace> traces) {
  if (traces.empty()) throw InputError("no traces to aggregate");
  std::size_t len = traces.front().records.size();
  for (const auto& t : traces) len = std::min(len, t.records.size());
  std::vector<CurvePoint> out(len);
  const auto count = static_cast<double>(traces.size());
  for (std::size_t r = 0; r < len; ++r) {
    const auto& first = traces.front().records[r];
    double sum = 0.0;
    for (const auto& t : traces) {
      if (t.records[r].iteration != first.iteration) throw InputError("traces record different iterations");
      sum += t.records[r].loss;
    }
    const double mean = sum / count;
    double ss = 0.0;
    for (const auto& t : traces) ss += (t.records[r].loss - mean) * (t.records[r].loss - mean);
    out[r].iteration = first.iteration;
    out[r].epoch = first.epoch;
    out[r].mean_loss = mean;
    out[r].stderr_loss = traces.size() > 1 ? std::sqrt(ss / (count - 1.0) / count) : 0.0;
  }
  return out;
}

std::optional<std::int64_t> empirical_iterations(std::span<const Trace> traces, double eps) {
  for (const auto& p : aggregate_traces(traces))
    if (p.mean_loss <= eps) return p.iteration;
  return std::nullopt;
}

}  // namespace mbsgd
