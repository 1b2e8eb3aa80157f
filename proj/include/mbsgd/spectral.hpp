#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <span>

namespace mbsgd {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr double kDefaultRankTolerance = 1e-10;

/// n x d feature matrix; row i is the feature vector x_i.
class DataMatrix {
 public:
  /// Throws InputError on an empty shape or non-finite entries.
  explicit DataMatrix(RowMatrix rows);

  Eigen::Index samples() const noexcept { return x_.rows(); }
  Eigen::Index dim() const noexcept { return x_.cols(); }
  const RowMatrix& matrix() const noexcept { return x_; }
  auto row(Eigen::Index i) const { return x_.row(i); }

  /// max_i ||x_i||^2
  double beta() const noexcept { return beta_; }

 private:
  RowMatrix x_;
  double beta_ = 0.0;
};

/// Symmetric positive semi-definite d x d matrix.
class Covariance {
 public:
  /// Symmetrizes the input as (A + A^T)/2. Throws InputError if A is not square, not finite,
  /// or asymmetric beyond 1e-12 relative to its largest entry.
  explicit Covariance(const Eigen::MatrixXd& a);

  const Eigen::MatrixXd& matrix() const noexcept { return h_; }
  Eigen::Index dim() const noexcept { return h_.rows(); }

 private:
  Eigen::MatrixXd h_;
};

/// Nonzero spectrum of a covariance plus the data bound beta.
struct SpectralSummary {
  double beta = 0.0;
  Eigen::VectorXd eigenvalues;  // descending, all > rank_tolerance * lambda1
  Eigen::MatrixXd eigenbasis;   // d x k, orthonormal columns matching eigenvalues
  double rank_tolerance = kDefaultRankTolerance;

  Eigen::Index rank() const noexcept { return eigenvalues.size(); }
  Eigen::Index dim() const noexcept { return eigenbasis.rows(); }
  double lambda1() const { return eigenvalues(0); }
  double lambdak() const { return eigenvalues(eigenvalues.size() - 1); }
};

/// H = (1/n) sum_i x_i x_i^T
Covariance covariance(const DataMatrix& data);

/// Eigendecomposition of H truncated at rank_tolerance * lambda1. `beta` must come from the
/// data rows (DataMatrix::beta), never from H. Throws DegenerateError for H == 0.
SpectralSummary spectral_summary(const Covariance& h, double beta,
                                 double rank_tolerance = kDefaultRankTolerance);

/// Convenience: covariance + summary with beta taken from the rows.
SpectralSummary spectral_summary(const DataMatrix& data,
                                 double rank_tolerance = kDefaultRankTolerance);

/// Orthogonal projection onto Range(H) = span(e_1..e_k).
Eigen::VectorXd project_range(const Eigen::VectorXd& v, const SpectralSummary& s);
/// v - project_range(v)
Eigen::VectorXd project_null(const Eigen::VectorXd& v, const SpectralSummary& s);

/// Matrix forms, column by column.
Eigen::MatrixXd project_range(const Eigen::MatrixXd& v, const SpectralSummary& s);
Eigen::MatrixXd project_null(const Eigen::MatrixXd& v, const SpectralSummary& s);

/// H_m = (1/m) sum over the multiset of indices of x_i x_i^T (repeats allowed).
Covariance subsample_covariance(const DataMatrix& data, std::span<const std::size_t> indices);

/// E[H_1^2] = (1/n) sum_i ||x_i||^2 x_i x_i^T
Eigen::MatrixXd expected_single_sample_square(const DataMatrix& data);

/// Smallest eigenvalue of a symmetric matrix.
double min_eigenvalue(const Eigen::MatrixXd& symmetric);

}  // namespace mbsgd
