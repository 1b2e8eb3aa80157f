#include "mbsgd/spectral.hpp"

#include "mbsgd/error.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <string>

namespace mbsgd {

DataMatrix::DataMatrix(RowMatrix rows) : x_(std::move(rows)) {
  if (x_.rows() < 1 || x_.cols() < 1) throw InputError("data matrix must have at least one row and one column");
  for (Eigen::Index i = 0; i < x_.rows(); ++i) {
    for (Eigen::Index j = 0; j < x_.cols(); ++j) {
      if (!std::isfinite(x_(i, j)))
        throw InputError("non-finite feature at row " + std::to_string(i) + ", column " + std::to_string(j));
    }
    beta_ = std::max(beta_, x_.row(i).squaredNorm());
  }
}

Covariance::Covariance(const Eigen::MatrixXd& a) {
  if (a.rows() != a.cols() || a.rows() < 1) throw InputError("covariance must be a non-empty square matrix");
  if (!a.allFinite()) throw InputError("covariance has non-finite entries");
  const double scale = a.cwiseAbs().maxCoeff();
  const double asym = (a - a.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-12 * scale) throw InputError("covariance is not symmetric");
  h_ = 0.5 * (a + a.transpose());
}

Covariance covariance(const DataMatrix& data) {
  const auto& x = data.matrix();
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(x.cols(), x.cols());
  h.selfadjointView<Eigen::Lower>().rankUpdate(x.transpose());
  h = h.selfadjointView<Eigen::Lower>();
  h /= static_cast<double>(x.rows());
  return Covariance(h);
}

SpectralSummary spectral_summary(const Covariance& h, double beta, double rank_tolerance) {
  if (!(rank_tolerance > 0.0 && rank_tolerance < 1.0)) throw InputError("rank_tolerance must lie in (0, 1)");
  if (!(beta > 0.0) || !std::isfinite(beta)) throw InputError("beta must be positive and finite");

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(h.matrix());
  if (solver.info() != Eigen::Success) throw DegenerateError("eigendecomposition failed");

  const Eigen::VectorXd& ascending = solver.eigenvalues();
  const Eigen::Index d = ascending.size();
  const double top = ascending(d - 1);
  if (!(top > 0.0)) throw DegenerateError("covariance is zero; no nonzero eigenvalue exists");

  Eigen::Index k = 0;
  while (k < d && ascending(d - 1 - k) > rank_tolerance * top) ++k;

  SpectralSummary s;
  s.beta = beta;
  s.rank_tolerance = rank_tolerance;
  s.eigenvalues.resize(k);
  s.eigenbasis.resize(d, k);
  for (Eigen::Index i = 0; i < k; ++i) {
    s.eigenvalues(i) = ascending(d - 1 - i);
    s.eigenbasis.col(i) = solver.eigenvectors().col(d - 1 - i);
  }
  return s;
}

SpectralSummary spectral_summary(const DataMatrix& data, double rank_tolerance) {
  return spectral_summary(covariance(data), data.beta(), rank_tolerance);
}

Eigen::VectorXd project_range(const Eigen::VectorXd& v, const SpectralSummary& s) {
  if (v.size() != s.dim()) throw DimensionError("vector dimension does not match eigenbasis");
  return s.eigenbasis * (s.eigenbasis.transpose() * v);
}

Eigen::VectorXd project_null(const Eigen::VectorXd& v, const SpectralSummary& s) {
  return v - project_range(v, s);
}

Eigen::MatrixXd project_range(const Eigen::MatrixXd& v, const SpectralSummary& s) {
  if (v.rows() != s.dim()) throw DimensionError("matrix row count does not match eigenbasis");
  return s.eigenbasis * (s.eigenbasis.transpose() * v);
}

Eigen::MatrixXd project_null(const Eigen::MatrixXd& v, const SpectralSummary& s) {
  return v - project_range(v, s);
}

Covariance subsample_covariance(const DataMatrix& data, std::span<const std::size_t> indices) {
  if (indices.empty()) throw InputError("subsample needs at least one index");
  const Eigen::Index d = data.dim();
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(d, d);
  for (std::size_t idx : indices) {
    if (idx >= static_cast<std::size_t>(data.samples())) throw InputError("subsample index out of range");
    const Eigen::VectorXd x = data.row(static_cast<Eigen::Index>(idx)).transpose();
    h.noalias() += x * x.transpose();
  }
  h /= static_cast<double>(indices.size());
  return Covariance(h);
}

Eigen::MatrixXd expected_single_sample_square(const DataMatrix& data) {
  const Eigen::Index d = data.dim();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(d, d);
  for (Eigen::Index i = 0; i < data.samples(); ++i) {
    const Eigen::VectorXd x = data.row(i).transpose();
    out.noalias() += x.squaredNorm() * (x * x.transpose());
  }
  out /= static_cast<double>(data.samples());
  return 0.5 * (out + out.transpose());
}

double min_eigenvalue(const Eigen::MatrixXd& symmetric) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(symmetric, Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) throw DegenerateError("eigendecomposition failed");
  return solver.eigenvalues()(0);
}

}  // namespace mbsgd
