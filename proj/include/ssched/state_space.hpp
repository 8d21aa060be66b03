#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/QR>

#include "ssched/core.hpp"
#include "ssched/random.hpp"

namespace ssched {

/// Linear time-varying model
///   x(t+1) = H(t) x(t) + w(t),   w ~ N(0, sigma^2 I_m)
///   y(t)   = A(t) x(t) + v(t),   v ~ N(0, sigma^2 I_n)
/// with x(0) ~ N(0, Sigma_x). A sequence holding a single matrix is used for
/// every time step.
template <typename Scalar>
struct StateSpaceModel {
  Eigen::Index state_dim = 0;  // m
  Eigen::Index sensors = 0;    // n
  std::vector<Matrix<Scalar>> transitions;
  std::vector<Matrix<Scalar>> measurements;
  Scalar sigma = Scalar(1);
  Matrix<Scalar> initial_covariance;

  const Matrix<Scalar>& transition(std::size_t t) const {
    return transitions.size() == 1 ? transitions.front() : transitions.at(t);
  }
  const Matrix<Scalar>& measurement(std::size_t t) const {
    return measurements.size() == 1 ? measurements.front() : measurements.at(t);
  }
};

template <typename Scalar>
void validate(const StateSpaceModel<Scalar>& model) {
  if (model.state_dim < 1) throw InvalidParams("state dimension must be >= 1");
  if (model.sensors < 1) throw InvalidParams("number of sensors must be >= 1");
  if (!(model.sigma > Scalar(0))) throw InvalidParams("sigma must be positive");
  if (model.transitions.empty()) throw InvalidParams("at least one transition matrix is required");
  if (model.measurements.empty()) throw InvalidParams("at least one measurement matrix is required");
  for (const auto& h : model.transitions) {
    if (h.rows() != model.state_dim || h.cols() != model.state_dim) {
      throw InvalidParams("transition matrix must be m x m");
    }
  }
  for (const auto& a : model.measurements) {
    if (a.rows() != model.sensors || a.cols() != model.state_dim) {
      throw InvalidParams("measurement matrix must be n x m");
    }
  }
  if (model.initial_covariance.rows() != model.state_dim) {
    throw InvalidParams("initial covariance must be m x m");
  }
  validate_spd(model.initial_covariance, "initial covariance");
}

/// Prediction and filtered error covariances at one time step.
template <typename Scalar>
struct CovarianceState {
  Matrix<Scalar> P_pred;
  Matrix<Scalar> P_filt;
  std::size_t t = 0;
};

/// P_{t|t-1} = H P_{t-1|t-1} H^T + sigma^2 I.
template <typename DerivedP, typename DerivedH>
Matrix<typename DerivedP::Scalar> predict_covariance(const Eigen::MatrixBase<DerivedP>& P_filt,
                                                     const Eigen::MatrixBase<DerivedH>& H,
                                                     typename DerivedP::Scalar sigma) {
  using Scalar = typename DerivedP::Scalar;
  const Matrix<Scalar> P = validate_spd(P_filt, "filtered covariance");
  if (H.rows() != P.rows() || H.cols() != P.cols()) {
    throw InvalidParams("transition matrix dimension mismatch");
  }
  if (!(sigma > Scalar(0))) throw InvalidParams("sigma must be positive");
  Matrix<Scalar> out = H * P * H.transpose();
  out.diagonal().array() += sigma * sigma;
  return symmetrize(out);
}

/// P_{t|t} = (P_{t|t-1}^{-1} + sigma^{-2} A_S^T A_S)^{-1}, by direct
/// factorization. A_S holds the selected measurement rows; zero rows means
/// nothing was selected.
template <typename DerivedP, typename DerivedA>
Matrix<typename DerivedP::Scalar> filtered_covariance(const Eigen::MatrixBase<DerivedP>& P_pred,
                                                      const Eigen::MatrixBase<DerivedA>& A_S,
                                                      typename DerivedP::Scalar sigma) {
  using Scalar = typename DerivedP::Scalar;
  const Matrix<Scalar> P = validate_spd(P_pred, "prediction covariance");
  if (A_S.rows() == 0) return P;
  if (A_S.cols() != P.rows()) throw InvalidParams("measurement row length mismatch");
  if (!(sigma > Scalar(0))) throw InvalidParams("sigma must be positive");
  Matrix<Scalar> fisher = spd_inverse(P);
  fisher.noalias() += (A_S.transpose() * A_S) / (sigma * sigma);
  return spd_inverse(fisher);
}

/// Rows of `A` at `indices`, in the given order.
template <typename Derived>
Matrix<typename Derived::Scalar> select_rows(const Eigen::MatrixBase<Derived>& A,
                                             std::span<const Eigen::Index> indices) {
  Matrix<typename Derived::Scalar> out(static_cast<Eigen::Index>(indices.size()), A.cols());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    out.row(static_cast<Eigen::Index>(r)) = A.row(indices[r]);
  }
  return out;
}

/// One sample path. states[t] is x(t) for t = 0..T; observations[t - 1] is
/// y(t) for t = 1..T.
template <typename Scalar>
struct Trajectory {
  std::vector<Vector<Scalar>> states;
  std::vector<Vector<Scalar>> observations;
};

/// Draws x(0) ~ N(0, Sigma_x), then for t = 1..T
///   x(t) = H(t-1) x(t-1) + w,  y(t) = A(t) x(t) + v.
template <typename Scalar>
Trajectory<Scalar> simulate(const StateSpaceModel<Scalar>& model, std::size_t horizon, std::uint64_t seed) {
  validate(model);
  if (horizon < 1) throw InvalidParams("horizon must be >= 1");
  Rng rng = make_rng(seed, {0x51u});
  const Eigen::Index m = model.state_dim;
  Eigen::LLT<Matrix<Scalar>> llt(symmetrize(model.initial_covariance));
  Trajectory<Scalar> traj;
  traj.states.reserve(horizon + 1);
  traj.observations.reserve(horizon);
  traj.states.push_back(llt.matrixL() * standard_normal_vector<Scalar>(rng, m));
  for (std::size_t t = 1; t <= horizon; ++t) {
    Vector<Scalar> x = model.transition(t - 1) * traj.states.back() +
                       model.sigma * standard_normal_vector<Scalar>(rng, m);
    Vector<Scalar> y = model.measurement(t) * x +
                       model.sigma * standard_normal_vector<Scalar>(rng, model.sensors);
    traj.states.push_back(std::move(x));
    traj.observations.push_back(std::move(y));
  }
  return traj;
}

/// Measurement-update of the state estimate given the already-filtered
/// covariance: x_filt = x_pred + sigma^{-2} P_filt A_S^T (y_S - A_S x_pred).
template <typename Scalar>
Vector<Scalar> update_mean(const Vector<Scalar>& x_pred, const Matrix<Scalar>& P_filt,
                           const Matrix<Scalar>& A_S, const Vector<Scalar>& y_S, Scalar sigma) {
  if (A_S.rows() == 0) return x_pred;
  return x_pred + P_filt * (A_S.transpose() * (y_S - A_S * x_pred)) / (sigma * sigma);
}

/// n x m matrix with i.i.d. N(0, sigma_h^2) entries.
template <typename Scalar>
Matrix<Scalar> gaussian_measurements(Rng& rng, Eigen::Index sensors, Eigen::Index state_dim, Scalar sigma_h) {
  Matrix<Scalar> A(sensors, state_dim);
  for (Eigen::Index i = 0; i < sensors; ++i) {
    for (Eigen::Index j = 0; j < state_dim; ++j) A(i, j) = sigma_h * Scalar(standard_normal(rng));
  }
  return A;
}

/// n x m matrix whose rows are uniform on the sphere of radius
/// sqrt(m) * sigma_h: covariance sigma_h^2 I and squared norm m sigma_h^2.
template <typename Scalar>
Matrix<Scalar> sphere_measurements(Rng& rng, Eigen::Index sensors, Eigen::Index state_dim, Scalar sigma_h) {
  Matrix<Scalar> A(sensors, state_dim);
  const Scalar radius = std::sqrt(Scalar(state_dim)) * sigma_h;
  for (Eigen::Index i = 0; i < sensors; ++i) {
    A.row(i) = uniform_on_sphere<Scalar>(rng, state_dim, radius).transpose();
  }
  return A;
}

/// m x m SPD matrix Q diag(lambda) Q^T with Q Haar-distributed orthogonal and
/// eigenvalues uniform in [lo, hi].
template <typename Scalar>
Matrix<Scalar> random_covariance(Rng& rng, Eigen::Index m, Scalar lo, Scalar hi) {
  if (!(lo > Scalar(0)) || hi < lo) throw InvalidParams("random covariance needs 0 < lo <= hi");
  Matrix<Scalar> G(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) G(i, j) = Scalar(standard_normal(rng));
  }
  Eigen::HouseholderQR<Matrix<Scalar>> qr(G);
  Matrix<Scalar> Q = qr.householderQ();
  // Sign fix so Q is Haar rather than biased by the QR convention.
  for (Eigen::Index j = 0; j < m; ++j) {
    if (qr.matrixQR()(j, j) < Scalar(0)) Q.col(j) = -Q.col(j);
  }
  Vector<Scalar> ev(m);
  for (Eigen::Index i = 0; i < m; ++i) ev(i) = lo + (hi - lo) * Scalar(uniform_unit(rng));
  return symmetrize(Matrix<Scalar>(Q * ev.asDiagonal() * Q.transpose()));
}

}  // namespace ssched
