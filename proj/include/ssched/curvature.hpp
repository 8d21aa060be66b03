#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "ssched/core.hpp"
#include "ssched/random.hpp"
#include "ssched/scheduler.hpp"
#include "ssched/state_space.hpp"

namespace ssched {

enum class CurvatureMode { exact, sampled };

/// Element-wise curvature C_l = max f_i(T) / f_i(S) over S subset T, i not in T,
/// |T \ S| = l, for l = 1..n-1, and C_max = max_l C_l.
struct CurvatureReport {
  std::vector<double> per_distance;  // index l - 1; NaN when no triple was examined
  double c_max = std::numeric_limits<double>::quiet_NaN();
  CurvatureMode mode = CurvatureMode::exact;
  std::uint64_t samples = 0;  // triples examined
  std::uint64_t skipped = 0;  // triples with f_i(S) <= kDegenerateGain

  /// c = 1 if C_max <= 1, C_max otherwise.
  double c_effective() const { return std::isnan(c_max) ? 1.0 : std::max(1.0, c_max); }
};

inline constexpr double kDegenerateGain = 1e-14;
inline constexpr int kDefaultExactCurvatureCap = 10;

/// Exact curvature of a set function over a ground set of `n` elements given
/// its marginal-gain table: gains[mask * n + i] = f_i(mask) for i not in mask.
/// Enumerates every (S, T, i) triple (3^{n-1} * n of them).
inline CurvatureReport exact_curvature_from_gains(int n, const std::vector<double>& gains) {
  if (n < 2) throw InvalidParams("curvature needs at least two ground-set elements");
  CurvatureReport rep;
  rep.mode = CurvatureMode::exact;
  rep.per_distance.assign(static_cast<std::size_t>(n - 1), -std::numeric_limits<double>::infinity());
  const std::uint32_t full = (std::uint32_t{1} << n) - 1;
  for (int i = 0; i < n; ++i) {
    const std::uint32_t bit = std::uint32_t{1} << i;
    const std::uint32_t others = full & ~bit;
    // T ranges over non-empty subsets of X \ {i}; S over strict subsets of T.
    for (std::uint32_t T = others; T != 0; T = (T - 1) & others) {
      const double gT = gains[static_cast<std::size_t>(T) * n + i];
      const int sizeT = std::popcount(T);
      for (std::uint32_t S = (T - 1) & T;; S = (S - 1) & T) {
        const double gS = gains[static_cast<std::size_t>(S) * n + i];
        ++rep.samples;
        if (gS <= kDegenerateGain) {
          ++rep.skipped;
        } else {
          const int l = sizeT - std::popcount(S);
          double& slot = rep.per_distance[static_cast<std::size_t>(l - 1)];
          slot = std::max(slot, gT / gS);
        }
        if (S == 0) break;
      }
    }
  }
  double cmax = -std::numeric_limits<double>::infinity();
  for (double& c : rep.per_distance) {
    if (std::isinf(c)) c = std::numeric_limits<double>::quiet_NaN();
    else cmax = std::max(cmax, c);
  }
  rep.c_max = std::isinf(cmax) ? std::numeric_limits<double>::quiet_NaN() : cmax;
  return rep;
}

/// Marginal-gain table of the sensor-scheduling objective, every F_S^{-1}
/// built by direct inversion and gains by the closed form.
template <typename DerivedP, typename DerivedA>
std::vector<double> scheduling_gain_table(const Eigen::MatrixBase<DerivedP>& P_pred,
                                          const Eigen::MatrixBase<DerivedA>& A, double sigma) {
  const int n = static_cast<int>(A.rows());
  const MatrixXd P = validate_spd(P_pred.template cast<double>(), "prediction covariance");
  const MatrixXd prior_info = spd_inverse(P);
  std::vector<double> gains(static_cast<std::size_t>(1u << n) * n, 0.0);
  FisherState<double> state = make_fisher_state(P, sigma);
  for (std::uint32_t mask = 0; mask < (std::uint32_t{1} << n); ++mask) {
    MatrixXd fisher = prior_info;
    for (int j = 0; j < n; ++j) {
      if (mask & (std::uint32_t{1} << j)) {
        fisher.noalias() += A.row(j).transpose().template cast<double>() * A.row(j).template cast<double>() /
                            (sigma * sigma);
      }
    }
    state.inverse_fisher = spd_inverse(fisher);
    for (int i = 0; i < n; ++i) {
      if (!(mask & (std::uint32_t{1} << i))) {
        gains[static_cast<std::size_t>(mask) * n + i] = marginal_gain(state, A.row(i).template cast<double>());
      }
    }
  }
  return gains;
}

/// Exact element-wise curvature of f(S) = Tr(P) - Tr(F_S^{-1}).
template <typename DerivedP, typename DerivedA>
CurvatureReport exact_curvature(const Eigen::MatrixBase<DerivedP>& P_pred, const Eigen::MatrixBase<DerivedA>& A,
                                double sigma, int cap = kDefaultExactCurvatureCap) {
  const int n = static_cast<int>(A.rows());
  if (n > cap || n > 24) {
    throw InstanceTooLarge("exact curvature: n=" + std::to_string(n) + " exceeds cap " + std::to_string(cap));
  }
  return exact_curvature_from_gains(n, scheduling_gain_table(P_pred, A, sigma));
}

/// Lower estimate of the curvature from random (S, T, i) triples: the size pair
/// |S| < |T| <= n - 1 is uniform over valid pairs, then T, S subset T and
/// i not in T are uniform. Samples come from one stream, so a run with more
/// samples examines a superset of the triples of a shorter run.
template <typename DerivedP, typename DerivedA>
CurvatureReport sampled_curvature(const Eigen::MatrixBase<DerivedP>& P_pred, const Eigen::MatrixBase<DerivedA>& A,
                                  double sigma, std::uint64_t samples, std::uint64_t seed) {
  const Eigen::Index n = A.rows();
  if (n < 2) throw InvalidParams("curvature needs at least two sensors");
  if (samples < 1) throw InvalidParams("samples must be >= 1");
  const MatrixXd P = validate_spd(P_pred.template cast<double>(), "prediction covariance");
  const MatrixXd Ad = A.template cast<double>();

  std::vector<std::pair<Eigen::Index, Eigen::Index>> size_pairs;
  for (Eigen::Index s = 0; s + 1 <= n - 1; ++s) {
    for (Eigen::Index t = s + 1; t <= n - 1; ++t) size_pairs.emplace_back(s, t);
  }
  std::vector<Eigen::Index> all(static_cast<std::size_t>(n));
  std::iota(all.begin(), all.end(), Eigen::Index{0});

  CurvatureReport rep;
  rep.mode = CurvatureMode::sampled;
  rep.per_distance.assign(static_cast<std::size_t>(n - 1), -std::numeric_limits<double>::infinity());
  Rng rng = make_rng(seed, {0xc0u});
  for (std::uint64_t k = 0; k < samples; ++k) {
    const auto [s_size, t_size] = size_pairs[uniform_index(rng, 0, size_pairs.size() - 1)];
    std::vector<Eigen::Index> perm = sample_without_replacement(rng, all, all.size());
    std::vector<Eigen::Index> T(perm.begin(), perm.begin() + t_size);
    std::vector<Eigen::Index> S = sample_without_replacement(rng, T, static_cast<std::size_t>(s_size));
    const std::vector<Eigen::Index> outside(perm.begin() + t_size, perm.end());
    const Eigen::Index i = outside[uniform_index(rng, 0, outside.size() - 1)];

    const auto stateS = direct_fisher_state(P, Ad, std::span<const Eigen::Index>(S), sigma);
    const auto stateT = direct_fisher_state(P, Ad, std::span<const Eigen::Index>(T), sigma);
    const double gS = marginal_gain(stateS, Ad.row(i));
    const double gT = marginal_gain(stateT, Ad.row(i));
    ++rep.samples;
    if (gS <= kDegenerateGain) {
      ++rep.skipped;
      continue;
    }
    double& slot = rep.per_distance[static_cast<std::size_t>(t_size - s_size - 1)];
    slot = std::max(slot, gT / gS);
  }
  double cmax = -std::numeric_limits<double>::infinity();
  for (double& c : rep.per_distance) {
    if (std::isinf(c)) c = std::numeric_limits<double>::quiet_NaN();
    else cmax = std::max(cmax, c);
  }
  rep.c_max = std::isinf(cmax) ? std::numeric_limits<double>::quiet_NaN() : cmax;
  return rep;
}

// ---------------------------------------------------------------------------
// Probabilistic curvature bound for i.i.d. random measurement rows
// ---------------------------------------------------------------------------

/// Rows a_j are independent, zero mean, covariance sigma_h^2 I_m and
/// ||a_j||^2 <= C almost surely.
struct Theorem2Params {
  double sigma_h = 0.0;
  double C = 0.0;
  double q = 0.0;
  Eigen::Index n = 0;
  Eigen::Index m = 0;
  double lambda_max_P = 0.0;
  double lambda_min_P = 0.0;
  double sigma = 1.0;
};

inline void validate(const Theorem2Params& p) {
  if (p.n < 1 || p.m < 1) throw InvalidParams("theorem2: n and m must be >= 1");
  if (!(p.q > 0.0)) throw InvalidParams("theorem2: q must be positive");
  if (!(p.lambda_min_P > 0.0) || p.lambda_max_P < p.lambda_min_P) {
    throw InvalidParams("theorem2: need 0 < lambda_min(P) <= lambda_max(P)");
  }
  if (!(p.sigma > 0.0) || p.sigma_h < 0.0) throw InvalidParams("theorem2: need sigma > 0, sigma_h >= 0");
  const double trace = static_cast<double>(p.m) * p.sigma_h * p.sigma_h;
  if (p.C < trace * (1.0 - 1e-12)) {
    throw InvalidParams("theorem2: C must be >= m * sigma_h^2 (E||a||^2 cannot exceed the almost-sure bound)");
  }
}

/// phi = (1/lambda_min(P) + (n sigma_h^2 + q) / sigma^2)^{-1}, the tightest
/// admissible value.
inline double theorem2_phi(double lambda_min_P, double sigma, double sigma_h, Eigen::Index n, double q) {
  return 1.0 / (1.0 / lambda_min_P + (static_cast<double>(n) * sigma_h * sigma_h + q) / (sigma * sigma));
}

/// lambda_max(P)^2 (sigma^2 + lambda_max(P) C) / (phi^2 (sigma^2 + phi C)).
inline double theorem2_curvature_bound(double lambda_max_P, double phi, double sigma, double C) {
  const double s2 = sigma * sigma;
  return lambda_max_P * lambda_max_P * (s2 + lambda_max_P * C) / (phi * phi * (s2 + phi * C));
}

inline double theorem2_curvature_bound(const Theorem2Params& p) {
  validate(p);
  const double phi = theorem2_phi(p.lambda_min_P, p.sigma, p.sigma_h, p.n, p.q);
  return theorem2_curvature_bound(p.lambda_max_P, phi, p.sigma, p.C);
}

/// Lower bound 1 - m exp(-(q^2/2) / ((C - sigma_h^2)(n sigma_h^2 + q/3))),
/// clamped to [0, 1].
inline double theorem2_success_probability(const Theorem2Params& p) {
  const double h2 = p.sigma_h * p.sigma_h;
  if (!(p.C > h2)) throw InvalidParams("theorem2: C must exceed sigma_h^2");
  if (!(p.q > 0.0)) throw InvalidParams("theorem2: q must be positive");
  const double denom = (p.C - h2) * (static_cast<double>(p.n) * h2 + p.q / 3.0);
  const double raw = 1.0 - static_cast<double>(p.m) * std::exp(-(p.q * p.q / 2.0) / denom);
  return std::clamp(raw, 0.0, 1.0);
}

/// The q at which theorem2_success_probability equals `target` in (0, 1)
/// (positive root of the quadratic in q).
inline double theorem2_q_for_probability(const Theorem2Params& p, double target) {
  if (!(target > 0.0 && target < 1.0)) throw InvalidParams("target probability must be in (0, 1)");
  const double h2 = p.sigma_h * p.sigma_h;
  if (!(p.C > h2)) throw InvalidParams("theorem2: C must exceed sigma_h^2");
  const double L = std::log(static_cast<double>(p.m) / (1.0 - target));
  if (L <= 0.0) throw InvalidParams("target probability is attained for every q");
  const double v = p.C - h2;
  const double b = 2.0 * L * v / 3.0;
  const double c = 2.0 * L * v * static_cast<double>(p.n) * h2;
  return 0.5 * (b + std::sqrt(b * b + 4.0 * c));
}

struct Theorem2Report {
  std::uint64_t trials = 0;
  std::uint64_t events = 0;  // trials with lambda_max(sum a a^T) <= n sigma_h^2 + q
  double event_frequency = 0.0;
  double probability_bound = 0.0;
  double curvature_bound = 0.0;
  std::uint64_t checked = 0;     // event trials whose exact curvature was computed
  std::uint64_t violations = 0;  // of those, C_max > bound
  double max_curvature = 0.0;    // over checked trials
};

/// Monte-Carlo check of the probabilistic curvature bound with the sphere
/// sampler (||a_j||^2 = m sigma_h^2 <= C). When `with_curvature` is false only
/// the spectral event frequency is measured.
template <typename DerivedP>
Theorem2Report theorem2_empirical_check(Eigen::Index m, Eigen::Index n, double sigma_h, double C, double q,
                                        double sigma, const Eigen::MatrixBase<DerivedP>& P_pred,
                                        std::uint64_t trials, std::uint64_t seed, bool with_curvature = true,
                                        int cap = kDefaultExactCurvatureCap) {
  const MatrixXd P = validate_spd(P_pred.template cast<double>(), "prediction covariance");
  if (P.rows() != m) throw InvalidParams("theorem2: P_pred must be m x m");
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(P, Eigen::EigenvaluesOnly);
  Theorem2Params params{sigma_h, C, q, n, m, es.eigenvalues().maxCoeff(), es.eigenvalues().minCoeff(), sigma};
  validate(params);

  Theorem2Report rep;
  rep.trials = trials;
  rep.curvature_bound = theorem2_curvature_bound(params);
  rep.probability_bound = theorem2_success_probability(params);
  const double threshold = static_cast<double>(n) * sigma_h * sigma_h + q;
  for (std::uint64_t trial = 0; trial < trials; ++trial) {
    Rng rng = make_rng(seed, {0x72u, trial});
    const MatrixXd A = sphere_measurements<double>(rng, n, m, sigma_h);
    const double spectral = lambda_max(MatrixXd(A.transpose() * A));
    if (spectral > threshold) continue;
    ++rep.events;
    if (!with_curvature) continue;
    const CurvatureReport cr = exact_curvature(P, A, sigma, cap);
    ++rep.checked;
    if (!std::isnan(cr.c_max)) {
      rep.max_curvature = std::max(rep.max_curvature, cr.c_max);
      if (cr.c_max > rep.curvature_bound * (1.0 + 1e-9)) ++rep.violations;
    }
  }
  rep.event_frequency = trials ? static_cast<double>(rep.events) / static_cast<double>(trials) : 0.0;
  return rep;
}

}  // namespace ssched
