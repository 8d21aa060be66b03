#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>

namespace ssched {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatrixXd = Matrix<double>;
using VectorXd = Vector<double>;

// Error taxonomy. Every library failure derives from ssched::Error so callers
// (the CLI in particular) can map categories onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidCovariance : public Error {
 public:
  using Error::Error;
};

class DuplicateSelection : public Error {
 public:
  using Error::Error;
};

class InvalidEpsilon : public Error {
 public:
  using Error::Error;
};

class InfeasibleBudget : public Error {
 public:
  using Error::Error;
};

class InstanceTooLarge : public Error {
 public:
  using Error::Error;
};

class InvalidParams : public Error {
 public:
  using Error::Error;
};

class InvalidTriplet : public Error {
 public:
  using Error::Error;
};

/// (M + M^T) / 2, evaluated into a fresh matrix.
template <typename Derived>
Matrix<typename Derived::Scalar> symmetrize(const Eigen::MatrixBase<Derived>& m) {
  return (m + m.transpose()) * typename Derived::Scalar(0.5);
}

/// Relative tolerance used when deciding whether a symmetric matrix is
/// positive definite: eigenvalues down to -tol * max(1, lambda_max) are
/// tolerated and clamped.
inline constexpr double kSpdTolerance = 1e-10;

/// Validates that `m` is square, symmetric and positive definite within
/// `tol`. Slightly negative round-off eigenvalues (above -tol * max(1, |lambda_max|))
/// are clamped to a tiny positive value and the repaired matrix is returned.
/// Throws InvalidCovariance otherwise.
template <typename Derived>
Matrix<typename Derived::Scalar> validate_spd(const Eigen::MatrixBase<Derived>& m,
                                              const char* what = "covariance",
                                              double tol = kSpdTolerance) {
  using Scalar = typename Derived::Scalar;
  if (m.rows() != m.cols() || m.rows() == 0) {
    throw InvalidCovariance(std::string(what) + ": matrix must be square and non-empty");
  }
  if (!m.allFinite()) {
    throw InvalidCovariance(std::string(what) + ": matrix has non-finite entries");
  }
  const Scalar scale = std::max<Scalar>(Scalar(1), m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > Scalar(tol) * scale) {
    throw InvalidCovariance(std::string(what) + ": matrix is not symmetric");
  }
  Matrix<Scalar> sym = symmetrize(m);
  Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> es(sym);
  const Scalar lmax = es.eigenvalues().maxCoeff();
  const Scalar lmin = es.eigenvalues().minCoeff();
  const Scalar floor = -Scalar(tol) * std::max<Scalar>(Scalar(1), std::abs(lmax));
  if (lmin < floor) {
    throw InvalidCovariance(std::string(what) + ": matrix is not positive definite (min eigenvalue " +
                            std::to_string(static_cast<double>(lmin)) + ")");
  }
  if (lmin <= Scalar(0)) {
    const Scalar eps = Scalar(tol) * std::max<Scalar>(Scalar(1), std::abs(lmax));
    Vector<Scalar> ev = es.eigenvalues().cwiseMax(eps);
    sym = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
    sym = symmetrize(sym);
  }
  return sym;
}

template <typename Derived>
typename Derived::Scalar lambda_max(const Eigen::MatrixBase<Derived>& sym) {
  Eigen::SelfAdjointEigenSolver<Matrix<typename Derived::Scalar>> es(sym, Eigen::EigenvaluesOnly);
  return es.eigenvalues().maxCoeff();
}

template <typename Derived>
typename Derived::Scalar lambda_min(const Eigen::MatrixBase<Derived>& sym) {
  Eigen::SelfAdjointEigenSolver<Matrix<typename Derived::Scalar>> es(sym, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

/// Inverse of a symmetric positive definite matrix via Cholesky, symmetrized.
template <typename Derived>
Matrix<typename Derived::Scalar> spd_inverse(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Index n = m.rows();
  Eigen::LLT<Matrix<Scalar>> llt(symmetrize(m));
  if (llt.info() != Eigen::Success) {
    throw InvalidCovariance("matrix is not positive definite (Cholesky failed)");
  }
  return symmetrize(llt.solve(Matrix<Scalar>::Identity(n, n)));
}

}  // namespace ssched
