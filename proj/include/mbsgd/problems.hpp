#pragma once

#include "mbsgd/rates.hpp"
#include "mbsgd/spectral.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace mbsgd {

/// Interpolated least-squares problem: targets Y = X W* exactly (one column per output).
class QuadraticProblem {
 public:
  /// Checks shapes and |x_i . w* - y_i| <= 1e-10 (1 + |y_i|) for every sample and output.
  /// `beta` defaults to max_i ||x_i||^2; kernel problems pass max K_ii instead.
  QuadraticProblem(DataMatrix data, Eigen::MatrixXd targets, Eigen::MatrixXd minimizer,
                   std::optional<double> beta = std::nullopt, double rank_tolerance = kDefaultRankTolerance);

  const DataMatrix& data() const noexcept { return data_; }
  const Eigen::MatrixXd& targets() const noexcept { return targets_; }
  const Eigen::MatrixXd& minimizer() const noexcept { return minimizer_; }
  const Covariance& covariance() const noexcept { return covariance_; }
  const SpectralSummary& spectral() const noexcept { return spectral_; }

  Eigen::Index samples() const noexcept { return data_.samples(); }
  Eigen::Index dim() const noexcept { return data_.dim(); }
  Eigen::Index outputs() const noexcept { return targets_.cols(); }
  double beta() const noexcept { return spectral_.beta; }

  /// (beta, lambda_1, lambda_k, n). lambda_1 is clamped to beta and lambda_k snapped to
  /// lambda_1 when they agree to 1e-12 relative (eigensolver rounding on flat spectra).
  QuadraticRateParams rate_params() const;

 private:
  DataMatrix data_;
  Eigen::MatrixXd targets_;
  Eigen::MatrixXd minimizer_;
  Covariance covariance_;
  SpectralSummary spectral_;
};

/// Smooth convex per-sample losses l_i(w) sharing the interpolating minimizer w*.
class ConvexProblem {
 public:
  using LossFn = std::function<double(Eigen::Index, std::span<const double>)>;
  /// Adds grad l_i(w) into the output span.
  using GradientFn = std::function<void(Eigen::Index, std::span<const double>, std::span<double>)>;

  /// Checks 0 <= l_i(w*) <= 1e-12 for all i.
  ConvexProblem(Eigen::Index samples, Eigen::VectorXd minimizer, LossFn loss, GradientFn add_gradient,
                ConvexRateParams constants);

  Eigen::Index samples() const noexcept { return samples_; }
  Eigen::Index dim() const noexcept { return minimizer_.size(); }
  const Eigen::VectorXd& minimizer() const noexcept { return minimizer_; }
  const ConvexRateParams& constants() const noexcept { return constants_; }

  double loss(Eigen::Index i, std::span<const double> w) const { return loss_(i, w); }
  void add_gradient(Eigen::Index i, std::span<const double> w, std::span<double> out) const {
    add_gradient_(i, w, out);
  }
  /// (1/n) sum_i l_i(w)
  double empirical_loss(std::span<const double> w) const;
  /// grad of the empirical loss
  Eigen::VectorXd full_gradient(std::span<const double> w) const;

 private:
  Eigen::Index samples_;
  Eigen::VectorXd minimizer_;
  LossFn loss_;
  GradientFn add_gradient_;
  ConvexRateParams constants_;
};

/// Orthogonal equal-norm features x_i = sqrt(beta) e_i (d = n): H = (beta/n) I, on which the
/// expected-loss upper bound holds with equality. w* is seeded standard normal.
QuadraticProblem tightness_instance(std::int64_t n, double beta, std::uint64_t seed);

/// Rows with norms uniform in [lo, hi] and uniformly random directions.
struct UniformNorms {
  double lo = 0.5;
  double hi = 1.0;
};
/// Rows x_ij ~ N(0, (j+1)^-exponent): a power-law covariance spectrum.
struct Decaying {
  double exponent = 1.0;
};
using SpectrumProfile = std::variant<UniformNorms, Decaying>;

/// Random rows from `profile`, seeded Gaussian w*, y = X w*. beta is recomputed from the rows.
QuadraticProblem random_interpolated_quadratic(std::int64_t n, std::int64_t d, const SpectrumProfile& profile,
                                               std::uint64_t seed);

/// Prescribed-spectrum instance with every ||x_i||^2 equal to sum(eigenvalues): X = S diag(sqrt(lambda))
/// with S the +-1 Sylvester-Hadamard matrix, so H = diag(lambda) and beta = tr(H), as for
/// a normalized kernel. eigenvalues.size() must be a power of two.
QuadraticProblem flat_norm_instance(std::span<const double> eigenvalues, std::uint64_t seed);

enum class KernelFamily { Gaussian, Laplace };

struct KernelSpec {
  KernelFamily family = KernelFamily::Gaussian;
  double sigma = 1.0;
};

KernelFamily parse_kernel_family(const std::string& name);
const char* to_string(KernelFamily f) noexcept;

/// K(x, x') = exp(-||x - x'||^2 / (2 sigma^2)) or exp(-||x - x'|| / sigma).
Eigen::MatrixXd kernel_matrix(const RowMatrix& points, const KernelSpec& spec);

/// Dual-space kernel regression: features are the rows of K^(1/2), so H = K/n, ||feature_i||^2 = K_ii
/// and beta = max K_ii. Duplicate points, clipped negative eigenvalues and non-interpolable labels
/// (targets replaced by their projection) are reported through `warnings`.
QuadraticProblem kernel_problem(const RowMatrix& points, const Eigen::MatrixXd& labels, const KernelSpec& spec,
                                std::vector<std::string>* warnings = nullptr);

/// Linear regression on the raw features with the minimum-norm interpolating w*; targets are
/// projected (with a warning) when the system is not interpolable.
QuadraticProblem linear_problem(const RowMatrix& points, const Eigen::MatrixXd& labels,
                                std::vector<std::string>* warnings = nullptr);

/// Half-squared per-sample losses l_i = (x_i . w - y_i)^2 / 2 of a single-output problem, with
/// constants (beta, lambda_1, lambda_k). Requires full column rank (lambda_k > 0 on all of R^d).
ConvexProblem quadratic_as_convex(const QuadraticProblem& base);

/// l_i(w) = h(x_i . w - y_i), h(z) = z^2/2 + mix * ln cosh z. Since h'' lies in [1, 1 + mix]:
/// beta = (1+mix) max ||x_i||^2, lambda = (1+mix) lambda_1, alpha = lambda_k.
ConvexProblem logcosh_problem(const QuadraticProblem& base, double mix);

/// Textual serialization: a header line "quadratic_problem n=<n> d=<d> outputs=<c> beta=<beta>",
/// n rows of "x_1,...,x_d,y_1,...,y_c", a "minimizer" line, then d rows of c values.
void write_problem(std::ostream& os, const QuadraticProblem& problem);
QuadraticProblem read_problem(std::istream& is);

}  // namespace mbsgd
