#include "mbsgd/problems.hpp"

#include "mbsgd/csv.hpp"
#include "mbsgd/error.hpp"
#include "mbsgd/rng.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <bit>
#include <cmath>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>

namespace mbsgd {
namespace {

double interpolation_gap(const RowMatrix& x, const Eigen::MatrixXd& y, const Eigen::MatrixXd& w) {
  const Eigen::MatrixXd residual = x * w - y;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < y.rows(); ++i)
    for (Eigen::Index c = 0; c < y.cols(); ++c)
      worst = std::max(worst, std::abs(residual(i, c)) / (1.0 + std::abs(y(i, c))));
  return worst;
}

/// Minimum-norm solution of X W = Y via the eigendecomposition of a symmetric PSD X,
/// or via SVD for a general X.
Eigen::MatrixXd min_norm_solve(const RowMatrix& x, const Eigen::MatrixXd& y) {
  Eigen::BDCSVD<Eigen::MatrixXd> svd(Eigen::MatrixXd(x), Eigen::ComputeThinU | Eigen::ComputeThinV);
  svd.setThreshold(kDefaultRankTolerance);
  return svd.solve(y);
}

/// Replace targets by X W* when they interpolate only up to solver rounding; warn when the
/// labels are genuinely outside Range(X).
Eigen::MatrixXd settle_targets(const RowMatrix& x, const Eigen::MatrixXd& labels, const Eigen::MatrixXd& w,
                               std::vector<std::string>* warnings) {
  const double gap = interpolation_gap(x, labels, w);
  if (gap > 1e-6 && warnings) {
    warnings->push_back("labels are not interpolable (relative residual " + format_double(gap) +
                        "); targets replaced by their projection onto the feature range");
  }
  return x * w;
}

}  // namespace

QuadraticProblem::QuadraticProblem(DataMatrix data, Eigen::MatrixXd targets, Eigen::MatrixXd minimizer,
                                   std::optional<double> beta, double rank_tolerance)
    : data_(std::move(data)),
      targets_(std::move(targets)),
      minimizer_(std::move(minimizer)),
      covariance_(mbsgd::covariance(data_)),
      spectral_(spectral_summary(covariance_, beta.value_or(data_.beta()), rank_tolerance)) {
  if (targets_.rows() != data_.samples() || targets_.cols() < 1)
    throw DimensionError("targets must have one row per sample and at least one column");
  if (minimizer_.rows() != data_.dim() || minimizer_.cols() != targets_.cols())
    throw DimensionError("minimizer must be d x (number of outputs)");
  if (!targets_.allFinite() || !minimizer_.allFinite()) throw InputError("targets and minimizer must be finite");
  if (beta && *beta < data_.beta() * (1.0 - 1e-12))
    throw InputError("beta must bound every squared row norm");
  const double gap = interpolation_gap(data_.matrix(), targets_, minimizer_);
  if (gap > 1e-10) throw InputError("minimizer does not interpolate the targets (gap " + format_double(gap) + ")");
}

QuadraticRateParams QuadraticProblem::rate_params() const {
  const double b = beta();
  double l1 = std::min(spectral_.lambda1(), b);
  double lk = spectral_.lambdak();
  if (l1 - lk <= 1e-12 * l1) lk = l1;
  return QuadraticRateParams(b, l1, lk, samples());
}

ConvexProblem::ConvexProblem(Eigen::Index samples, Eigen::VectorXd minimizer, LossFn loss, GradientFn add_gradient,
                             ConvexRateParams constants)
    : samples_(samples),
      minimizer_(std::move(minimizer)),
      loss_(std::move(loss)),
      add_gradient_(std::move(add_gradient)),
      constants_(constants) {
  if (samples_ < 1 || minimizer_.size() < 1) throw InputError("convex problem needs samples and a dimension");
  const std::span<const double> w(minimizer_.data(), static_cast<std::size_t>(minimizer_.size()));
  for (Eigen::Index i = 0; i < samples_; ++i) {
    const double l = loss_(i, w);
    if (!(l >= -1e-15 && l <= 1e-12))
      throw InputError("interpolation fails: loss " + std::to_string(i) + " at the minimizer is " + format_double(l));
  }
}

double ConvexProblem::empirical_loss(std::span<const double> w) const {
  double s = 0.0;
  for (Eigen::Index i = 0; i < samples_; ++i) s += loss_(i, w);
  return s / static_cast<double>(samples_);
}

Eigen::VectorXd ConvexProblem::full_gradient(std::span<const double> w) const {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(dim());
  const std::span<double> out(g.data(), static_cast<std::size_t>(g.size()));
  for (Eigen::Index i = 0; i < samples_; ++i) add_gradient_(i, w, out);
  return g / static_cast<double>(samples_);
}

QuadraticProblem tightness_instance(std::int64_t n, double beta, std::uint64_t seed) {
  if (n < 1) throw InputError("tightness instance needs n >= 1");
  if (!(beta > 0.0) || !std::isfinite(beta)) throw InputError("beta must be positive");
  RowMatrix x = RowMatrix::Identity(n, n) * std::sqrt(beta);
  Eigen::MatrixXd w = gaussian_matrix(n, 1, seed);
  Eigen::MatrixXd y = x * w;
  // ||x_i||^2 may round one ulp away from beta; beta is the construction constant
  return QuadraticProblem(DataMatrix(std::move(x)), std::move(y), std::move(w), std::max(beta, std::sqrt(beta) * std::sqrt(beta)));
}

QuadraticProblem random_interpolated_quadratic(std::int64_t n, std::int64_t d, const SpectrumProfile& profile,
                                               std::uint64_t seed) {
  if (n < 1 || d < 1) throw InputError("need n >= 1 and d >= 1");
  RowMatrix x = gaussian_matrix(n, d, derive_seed(seed, 1));
  if (const auto* u = std::get_if<UniformNorms>(&profile)) {
    if (!(u->lo >= 0.0 && u->hi >= u->lo && u->hi > 0.0)) throw InputError("uniform norm profile needs 0 <= lo <= hi, hi > 0");
    std::mt19937_64 gen(derive_seed(seed, 2));
    std::uniform_real_distribution<double> norm(u->lo, u->hi);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double len = x.row(i).norm();
      const double r = norm(gen);
      x.row(i) *= len > 0.0 ? r / len : 0.0;
    }
  } else {
    const auto& dec = std::get<Decaying>(profile);
    if (!std::isfinite(dec.exponent)) throw InputError("decay exponent must be finite");
    for (Eigen::Index j = 0; j < d; ++j) x.col(j) *= std::pow(static_cast<double>(j + 1), -0.5 * dec.exponent);
  }
  if (x.isZero(0.0)) throw InputError("degenerate profile: all rows are zero");
  Eigen::MatrixXd w = gaussian_matrix(d, 1, derive_seed(seed, 3));
  Eigen::MatrixXd y = x * w;
  return QuadraticProblem(DataMatrix(std::move(x)), std::move(y), std::move(w));
}

QuadraticProblem flat_norm_instance(std::span<const double> eigenvalues, std::uint64_t seed) {
  const std::size_t n = eigenvalues.size();
  if (n == 0 || !std::has_single_bit(n)) throw InputError("flat-norm instance size must be a power of two");
  double total = 0.0;
  for (double l : eigenvalues) {
    if (!(l >= 0.0) || !std::isfinite(l)) throw InputError("eigenvalues must be finite and non-negative");
    total += l;
  }
  if (!(total > 0.0)) throw InputError("at least one eigenvalue must be positive");
  const auto size = static_cast<Eigen::Index>(n);
  RowMatrix x(size, size);
  for (Eigen::Index i = 0; i < size; ++i)
    for (Eigen::Index j = 0; j < size; ++j) {
      const bool negative = std::popcount(static_cast<unsigned long long>(i & j)) % 2 != 0;
      const double root = std::sqrt(eigenvalues[static_cast<std::size_t>(j)]);
      x(i, j) = negative ? -root : root;
    }
  Eigen::MatrixXd w = gaussian_matrix(size, 1, seed);
  Eigen::MatrixXd y = x * w;
  DataMatrix data(std::move(x));
  const double beta = std::max(total, data.beta());
  return QuadraticProblem(std::move(data), std::move(y), std::move(w), beta);
}

KernelFamily parse_kernel_family(const std::string& name) {
  if (name == "gaussian") return KernelFamily::Gaussian;
  if (name == "laplace") return KernelFamily::Laplace;
  throw InputError("unknown kernel family '" + name + "' (expected gaussian or laplace)");
}

const char* to_string(KernelFamily f) noexcept { return f == KernelFamily::Gaussian ? "gaussian" : "laplace"; }

Eigen::MatrixXd kernel_matrix(const RowMatrix& points, const KernelSpec& spec) {
  if (!(spec.sigma > 0.0) || !std::isfinite(spec.sigma)) throw InputError("kernel bandwidth must be positive and finite");
  const Eigen::Index n = points.rows();
  Eigen::MatrixXd k(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    k(i, i) = 1.0;
    for (Eigen::Index j = 0; j < i; ++j) {
      const double dist2 = (points.row(i) - points.row(j)).squaredNorm();
      const double v = spec.family == KernelFamily::Gaussian ? std::exp(-dist2 / (2.0 * spec.sigma * spec.sigma))
                                                             : std::exp(-std::sqrt(dist2) / spec.sigma);
      k(i, j) = v;
      k(j, i) = v;
    }
  }
  return k;
}

QuadraticProblem kernel_problem(const RowMatrix& points, const Eigen::MatrixXd& labels, const KernelSpec& spec,
                                std::vector<std::string>* warnings) {
  const Eigen::Index n = points.rows();
  if (n < 1) throw InputError("kernel problem needs at least one point");
  if (labels.rows() != n || labels.cols() < 1) throw DimensionError("labels must have one row per point");
  if (!points.allFinite() || !labels.allFinite()) throw InputError("points and labels must be finite");

  for (Eigen::Index i = 0; i < n && warnings; ++i)
    for (Eigen::Index j = 0; j < i; ++j)
      if (points.row(i) == points.row(j)) {
        warnings->push_back("duplicate points " + std::to_string(j) + " and " + std::to_string(i) +
                            "; the kernel matrix is singular and lambda_k reflects the reduced rank");
      }

  const Eigen::MatrixXd k = kernel_matrix(points, spec);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(k);
  if (eig.info() != Eigen::Success) throw DegenerateError("kernel eigendecomposition failed");
  Eigen::VectorXd lam = eig.eigenvalues();
  const double top = lam.maxCoeff();
  if (lam.minCoeff() < 0.0) {
    if (warnings)
      warnings->push_back("kernel matrix has negative eigenvalue " + format_double(lam.minCoeff()) + "; clipped to 0");
    lam = lam.cwiseMax(0.0);
  }
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < n; ++i)
    if (lam(i) > kDefaultRankTolerance * top) ++rank;
  if (rank < n && warnings)
    warnings->push_back("kernel matrix is numerically singular: rank " + std::to_string(rank) + " of " +
                        std::to_string(n));

  const Eigen::MatrixXd& u = eig.eigenvectors();
  Eigen::VectorXd root = lam.cwiseSqrt();
  Eigen::VectorXd inv_root(n);
  for (Eigen::Index i = 0; i < n; ++i) inv_root(i) = lam(i) > kDefaultRankTolerance * top ? 1.0 / root(i) : 0.0;

  RowMatrix features = u * root.asDiagonal() * u.transpose();
  features = (0.5 * (features + features.transpose())).eval();
  Eigen::MatrixXd w = u * inv_root.asDiagonal() * (u.transpose() * labels);
  Eigen::MatrixXd y = settle_targets(features, labels, w, warnings);
  const double beta = k.diagonal().maxCoeff();
  return QuadraticProblem(DataMatrix(std::move(features)), std::move(y), std::move(w), beta);
}

QuadraticProblem linear_problem(const RowMatrix& points, const Eigen::MatrixXd& labels,
                                std::vector<std::string>* warnings) {
  if (labels.rows() != points.rows() || labels.cols() < 1) throw DimensionError("labels must have one row per point");
  DataMatrix data(points);
  Eigen::MatrixXd w = min_norm_solve(points, labels);
  Eigen::MatrixXd y = settle_targets(points, labels, w, warnings);
  return QuadraticProblem(std::move(data), std::move(y), std::move(w));
}

ConvexProblem quadratic_as_convex(const QuadraticProblem& base) {
  if (base.outputs() != 1) throw InputError("convex wrapper needs a single-output problem");
  if (base.spectral().rank() != base.dim())
    throw InputError("convex wrapper needs full column rank (strong convexity on all of R^d)");
  const auto params = base.rate_params();
  const RowMatrix x = base.data().matrix();
  const Eigen::VectorXd y = base.targets().col(0);
  const Eigen::Index d = base.dim();
  auto residual = [x, y, d](Eigen::Index i, std::span<const double> w) {
    double r = 0.0;
    for (Eigen::Index j = 0; j < d; ++j) r += x(i, j) * w[static_cast<std::size_t>(j)];
    return r - y(i);
  };
  return ConvexProblem(
      base.samples(), base.minimizer().col(0),
      [residual](Eigen::Index i, std::span<const double> w) {
        const double r = residual(i, w);
        return 0.5 * r * r;
      },
      [residual, x, d](Eigen::Index i, std::span<const double> w, std::span<double> out) {
        const double r = residual(i, w);
        for (Eigen::Index j = 0; j < d; ++j) out[static_cast<std::size_t>(j)] += r * x(i, j);
      },
      ConvexRateParams(params.beta(), params.lambda1(), params.lambdak()));
}

ConvexProblem logcosh_problem(const QuadraticProblem& base, double mix) {
  if (!(mix >= 0.0) || !std::isfinite(mix)) throw InputError("log-cosh mix must be finite and >= 0");
  if (base.outputs() != 1) throw InputError("log-cosh problem needs a single-output base");
  if (base.spectral().rank() != base.dim())
    throw InputError("log-cosh problem needs full column rank (strong convexity on all of R^d)");
  const auto params = base.rate_params();
  const RowMatrix x = base.data().matrix();
  const Eigen::VectorXd y = base.targets().col(0);
  const Eigen::Index d = base.dim();
  auto residual = [x, y, d](Eigen::Index i, std::span<const double> w) {
    double r = 0.0;
    for (Eigen::Index j = 0; j < d; ++j) r += x(i, j) * w[static_cast<std::size_t>(j)];
    return r - y(i);
  };
  auto h = [mix](double z) {
    const double a = std::abs(z);
    // ln cosh z = |z| + log1p(exp(-2|z|)) - ln 2
    return 0.5 * z * z + mix * (a + std::log1p(std::exp(-2.0 * a)) - std::log(2.0));
  };
  const double scale = 1.0 + mix;
  return ConvexProblem(
      base.samples(), base.minimizer().col(0),
      [residual, h](Eigen::Index i, std::span<const double> w) { return h(residual(i, w)); },
      [residual, x, d, mix](Eigen::Index i, std::span<const double> w, std::span<double> out) {
        const double r = residual(i, w);
        const double dh = r + mix * std::tanh(r);
        for (Eigen::Index j = 0; j < d; ++j) out[static_cast<std::size_t>(j)] += dh * x(i, j);
      },
      ConvexRateParams(scale * base.data().beta(), scale * params.lambda1(), params.lambdak()));
}

void write_problem(std::ostream& os, const QuadraticProblem& problem) {
  const Eigen::Index n = problem.samples(), d = problem.dim(), c = problem.outputs();
  os << "quadratic_problem n=" << n << " d=" << d << " outputs=" << c << " beta=" << format_double(problem.beta())
     << '\n';
  const auto& x = problem.data().matrix();
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) os << (j ? "," : "") << format_double(x(i, j));
    for (Eigen::Index j = 0; j < c; ++j) os << ',' << format_double(problem.targets()(i, j));
    os << '\n';
  }
  os << "minimizer\n";
  for (Eigen::Index j = 0; j < d; ++j) {
    for (Eigen::Index k = 0; k < c; ++k) os << (k ? "," : "") << format_double(problem.minimizer()(j, k));
    os << '\n';
  }
}

QuadraticProblem read_problem(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw ParseError("empty problem file", 1, 0);
  long long n = 0, d = 0, c = 0;
  std::string beta_text;
  {
    std::istringstream hs(line);
    std::string tag, field;
    hs >> tag;
    if (tag != "quadratic_problem") throw ParseError("missing quadratic_problem header", 1, 1);
    while (hs >> field) {
      const auto eq = field.find('=');
      if (eq == std::string::npos) throw ParseError("malformed header field '" + field + "'", 1, 0);
      const std::string key = field.substr(0, eq), value = field.substr(eq + 1);
      if (key == "n") n = std::stoll(value);
      else if (key == "d") d = std::stoll(value);
      else if (key == "outputs") c = std::stoll(value);
      else if (key == "beta") beta_text = value;
    }
  }
  double beta = 0.0;
  if (n < 1 || d < 1 || c < 1 || !parse_double(beta_text, beta)) throw ParseError("incomplete problem header", 1, 0);

  auto read_row = [&](long row_no, Eigen::Index width) {
    if (!std::getline(is, line)) throw ParseError("unexpected end of problem file", row_no, 0);
    std::vector<double> values;
    std::istringstream rs(line);
    std::string cell;
    while (std::getline(rs, cell, ',')) {
      double v = 0.0;
      if (!parse_double(cell, v))
        throw ParseError("bad number '" + cell + "'", row_no, static_cast<long>(values.size()) + 1);
      values.push_back(v);
    }
    if (static_cast<Eigen::Index>(values.size()) != width) throw ParseError("wrong number of cells", row_no, 0);
    return values;
  };

  RowMatrix x(n, d);
  Eigen::MatrixXd y(n, c), w(d, c);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto v = read_row(static_cast<long>(i) + 2, d + c);
    for (Eigen::Index j = 0; j < d; ++j) x(i, j) = v[static_cast<std::size_t>(j)];
    for (Eigen::Index j = 0; j < c; ++j) y(i, j) = v[static_cast<std::size_t>(d + j)];
  }
  if (!std::getline(is, line) || line != "minimizer") throw ParseError("expected 'minimizer' line", static_cast<long>(n) + 2, 1);
  for (Eigen::Index j = 0; j < d; ++j) {
    const auto v = read_row(static_cast<long>(n + j) + 3, c);
    for (Eigen::Index k = 0; k < c; ++k) w(j, k) = v[static_cast<std::size_t>(k)];
  }
  return QuadraticProblem(DataMatrix(std::move(x)), std::move(y), std::move(w), beta);
}

}  // namespace mbsgd
