#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ssched/core.hpp"
#include "ssched/random.hpp"
#include "ssched/state_space.hpp"

namespace ssched {

/// Selected sensor set S together with F_S^{-1}, the inverse Fisher
/// information P_{t|t-1}^{-1} + sigma^{-2} sum_{i in S} a_i a_i^T.
/// Treated as an immutable value: rank_one_update returns a new state.
template <typename Scalar>
struct FisherState {
  std::vector<Eigen::Index> selected;
  Matrix<Scalar> inverse_fisher;
  Scalar sigma = Scalar(1);
  Scalar prior_trace = Scalar(0);
  std::uint64_t gain_evals = 0;

  bool contains(Eigen::Index j) const {
    return std::find(selected.begin(), selected.end(), j) != selected.end();
  }
};

/// Empty selection: F_inv = P_{t|t-1}.
template <typename Derived>
FisherState<typename Derived::Scalar> make_fisher_state(const Eigen::MatrixBase<Derived>& P_pred,
                                                        typename Derived::Scalar sigma) {
  using Scalar = typename Derived::Scalar;
  if (!(sigma > Scalar(0))) throw InvalidParams("sigma must be positive");
  FisherState<Scalar> state;
  state.inverse_fisher = validate_spd(P_pred, "prediction covariance");
  state.sigma = sigma;
  state.prior_trace = state.inverse_fisher.trace();
  return state;
}

/// f(S) = Tr(P_{t|t-1}) - Tr(F_S^{-1}).
template <typename Scalar>
Scalar objective(const FisherState<Scalar>& state) {
  return state.prior_trace - state.inverse_fisher.trace();
}

/// Closed-form gain of adding measurement row a_j:
///   a^T F^{-2} a / (sigma^2 + a^T F^{-1} a).
template <typename Scalar, typename Derived>
Scalar marginal_gain(const FisherState<Scalar>& state, const Eigen::MatrixBase<Derived>& a) {
  const Vector<Scalar> av = a.reshaped();
  const Vector<Scalar> v = state.inverse_fisher * av;
  const Scalar quad = av.dot(v);
  return v.squaredNorm() / (state.sigma * state.sigma + quad);
}

/// Sherman-Morrison downdate of F^{-1} after adding sensor j.
template <typename Scalar, typename Derived>
FisherState<Scalar> rank_one_update(const FisherState<Scalar>& state, Eigen::Index j,
                                    const Eigen::MatrixBase<Derived>& a) {
  if (state.contains(j)) {
    throw DuplicateSelection("sensor " + std::to_string(j) + " is already selected");
  }
  const Vector<Scalar> av = a.reshaped();
  const Vector<Scalar> v = state.inverse_fisher * av;
  const Scalar denom = state.sigma * state.sigma + av.dot(v);
  FisherState<Scalar> next = state;
  next.inverse_fisher.noalias() -= (v * v.transpose()) / denom;
  next.inverse_fisher = symmetrize(next.inverse_fisher);
  next.selected.push_back(j);
  return next;
}

/// Reference path: F_S^{-1} for an arbitrary index set by direct factorization.
template <typename DerivedP, typename DerivedA>
FisherState<typename DerivedP::Scalar> direct_fisher_state(const Eigen::MatrixBase<DerivedP>& P_pred,
                                                           const Eigen::MatrixBase<DerivedA>& A,
                                                           std::span<const Eigen::Index> indices,
                                                           typename DerivedP::Scalar sigma) {
  FisherState<typename DerivedP::Scalar> state = make_fisher_state(P_pred, sigma);
  state.inverse_fisher = filtered_covariance(state.inverse_fisher, select_rows(A, indices), sigma);
  state.selected.assign(indices.begin(), indices.end());
  return state;
}

// ---------------------------------------------------------------------------
// Schedules
// ---------------------------------------------------------------------------

enum class Method { randomized_greedy, classic_greedy, random_uniform, brute_force_optimal };

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::randomized_greedy: return "randomized_greedy";
    case Method::classic_greedy: return "classic_greedy";
    case Method::random_uniform: return "random_uniform";
    case Method::brute_force_optimal: return "brute_force_optimal";
  }
  return "unknown";
}

inline std::optional<Method> parse_method(std::string_view s) {
  for (Method m : {Method::randomized_greedy, Method::classic_greedy, Method::random_uniform,
                   Method::brute_force_optimal}) {
    if (to_string(m) == s) return m;
  }
  return std::nullopt;
}

template <typename Scalar>
struct Schedule {
  std::vector<Eigen::Index> indices;  // selection order
  Method method = Method::classic_greedy;
  std::optional<Scalar> epsilon;
  std::uint64_t seed = 0;
  std::uint64_t gain_evals = 0;
  Scalar objective = std::numeric_limits<Scalar>::quiet_NaN();
  Matrix<Scalar> filtered;  // F_S^{-1}; empty when not evaluated

  std::vector<Eigen::Index> sorted_indices() const {
    std::vector<Eigen::Index> s = indices;
    std::sort(s.begin(), s.end());
    return s;
  }
};

inline void check_budget(Eigen::Index n, Eigen::Index k) {
  if (k < 1 || k > n) {
    throw InfeasibleBudget("budget k=" + std::to_string(k) + " must satisfy 1 <= k <= n=" + std::to_string(n));
  }
}

/// Admissible epsilon range is [e^{-k}, 1); the lower end reproduces classic greedy.
inline void check_epsilon(Eigen::Index k, double epsilon) {
  const double lower = std::exp(-static_cast<double>(k));
  if (!(epsilon >= lower * (1.0 - 1e-12)) || !(epsilon < 1.0)) {
    throw InvalidEpsilon("epsilon=" + std::to_string(epsilon) + " outside [e^-k, 1) for k=" + std::to_string(k));
  }
}

/// s = ceil((n/k) ln(1/epsilon)), clamped to [1, n].
inline Eigen::Index sample_size(Eigen::Index n, Eigen::Index k, double epsilon) {
  check_budget(n, k);
  check_epsilon(k, epsilon);
  const double raw = static_cast<double>(n) / static_cast<double>(k) * std::log(1.0 / epsilon);
  // Round-off guard so that e.g. (n/k) * k = n(1 + 1e-16) does not round up past n.
  const double s = std::ceil(raw - 1e-9 * std::max(1.0, raw));
  return std::clamp<Eigen::Index>(static_cast<Eigen::Index>(s), 1, n);
}

namespace detail {

// Shared greedy loop. `pool_size` <= 0 means "evaluate every remaining sensor".
template <typename DerivedP, typename DerivedA>
Schedule<typename DerivedP::Scalar> greedy_select(const Eigen::MatrixBase<DerivedP>& P_pred,
                                                  const Eigen::MatrixBase<DerivedA>& A,
                                                  typename DerivedP::Scalar sigma, Eigen::Index k,
                                                  Eigen::Index pool_size, std::uint64_t seed) {
  using Scalar = typename DerivedP::Scalar;
  const Eigen::Index n = A.rows();
  check_budget(n, k);
  if (A.cols() != P_pred.rows()) throw InvalidParams("measurement row length mismatch");

  FisherState<Scalar> state = make_fisher_state(P_pred, sigma);
  std::vector<Eigen::Index> remaining(static_cast<std::size_t>(n));
  std::iota(remaining.begin(), remaining.end(), Eigen::Index{0});
  Rng rng = make_rng(seed);

  for (Eigen::Index it = 0; it < k; ++it) {
    const bool full = pool_size <= 0 || static_cast<std::size_t>(pool_size) >= remaining.size();
    const std::vector<Eigen::Index> candidates =
        full ? remaining : sample_without_replacement(rng, remaining, static_cast<std::size_t>(pool_size));

    Eigen::Index best = -1;
    Scalar best_gain = -std::numeric_limits<Scalar>::infinity();
    for (Eigen::Index j : candidates) {
      const Scalar g = marginal_gain(state, A.row(j));
      ++state.gain_evals;
      if (g > best_gain || (g == best_gain && j < best)) {
        best_gain = g;
        best = j;
      }
    }
    state = rank_one_update(state, best, A.row(best));
    remaining.erase(std::find(remaining.begin(), remaining.end(), best));
  }

  Schedule<Scalar> out;
  out.indices = state.selected;
  out.gain_evals = state.gain_evals;
  out.objective = objective(state);
  out.filtered = std::move(state.inverse_fisher);
  out.seed = seed;
  return out;
}

}  // namespace detail

/// Randomized greedy: each of the k iterations evaluates the marginal gain of
/// s = sample_size(n, k, epsilon) sensors drawn uniformly without replacement
/// from the unselected ones (the whole remainder when fewer are left) and
/// adds the best one, ties to the smallest index.
template <typename DerivedP, typename DerivedA>
Schedule<typename DerivedP::Scalar> randomized_greedy(const Eigen::MatrixBase<DerivedP>& P_pred,
                                                      const Eigen::MatrixBase<DerivedA>& A,
                                                      typename DerivedP::Scalar sigma, Eigen::Index k,
                                                      double epsilon, std::uint64_t seed) {
  const Eigen::Index s = sample_size(A.rows(), k, epsilon);
  auto out = detail::greedy_select(P_pred, A, sigma, k, s, seed);
  out.method = Method::randomized_greedy;
  out.epsilon = static_cast<typename DerivedP::Scalar>(epsilon);
  return out;
}

/// Classic greedy: every remaining sensor is evaluated at every iteration.
template <typename DerivedP, typename DerivedA>
Schedule<typename DerivedP::Scalar> classic_greedy(const Eigen::MatrixBase<DerivedP>& P_pred,
                                                   const Eigen::MatrixBase<DerivedA>& A,
                                                   typename DerivedP::Scalar sigma, Eigen::Index k) {
  auto out = detail::greedy_select(P_pred, A, sigma, k, 0, 0);
  out.method = Method::classic_greedy;
  return out;
}

inline double binomial(Eigen::Index n, Eigen::Index k) {
  if (k < 0 || k > n) return 0.0;
  k = std::min(k, n - k);
  double c = 1.0;
  for (Eigen::Index i = 1; i <= k; ++i) c = c * static_cast<double>(n - k + i) / static_cast<double>(i);
  return std::round(c);
}

inline constexpr double kDefaultBruteForceCap = 2e6;

/// Calls fn(span of k indices) for every k-subset of [n] in lexicographic order.
template <typename Fn>
void for_each_combination(Eigen::Index n, Eigen::Index k, Fn&& fn) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(k));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  if (k == 0) {
    fn(std::span<const Eigen::Index>(idx));
    return;
  }
  while (true) {
    fn(std::span<const Eigen::Index>(idx));
    Eigen::Index i = k - 1;
    while (i >= 0 && idx[static_cast<std::size_t>(i)] == n - k + i) --i;
    if (i < 0) return;
    ++idx[static_cast<std::size_t>(i)];
    for (Eigen::Index j = i + 1; j < k; ++j) {
      idx[static_cast<std::size_t>(j)] = idx[static_cast<std::size_t>(j - 1)] + 1;
    }
  }
}

/// Exhaustive search over all k-subsets with f evaluated by direct
/// inversion. Ties resolve to the lexicographically smallest set.
template <typename DerivedP, typename DerivedA>
Schedule<typename DerivedP::Scalar> brute_force_optimal(const Eigen::MatrixBase<DerivedP>& P_pred,
                                                        const Eigen::MatrixBase<DerivedA>& A,
                                                        typename DerivedP::Scalar sigma, Eigen::Index k,
                                                        double cap = kDefaultBruteForceCap) {
  using Scalar = typename DerivedP::Scalar;
  const Eigen::Index n = A.rows();
  check_budget(n, k);
  if (binomial(n, k) > cap) {
    throw InstanceTooLarge("C(" + std::to_string(n) + "," + std::to_string(k) + ") exceeds the enumeration cap");
  }
  const Matrix<Scalar> P = validate_spd(P_pred, "prediction covariance");
  const Matrix<Scalar> prior_info = spd_inverse(P);
  const Scalar prior_trace = P.trace();
  const Scalar inv_var = Scalar(1) / (sigma * sigma);

  Schedule<Scalar> best;
  best.method = Method::brute_force_optimal;
  best.objective = -std::numeric_limits<Scalar>::infinity();
  Matrix<Scalar> fisher(P.rows(), P.cols());
  for_each_combination(n, k, [&](std::span<const Eigen::Index> idx) {
    fisher = prior_info;
    for (Eigen::Index j : idx) fisher.noalias() += inv_var * A.row(j).transpose() * A.row(j);
    Matrix<Scalar> inv = spd_inverse(fisher);
    const Scalar f = prior_trace - inv.trace();
    if (f > best.objective) {
      best.objective = f;
      best.indices.assign(idx.begin(), idx.end());
      best.filtered = std::move(inv);
    }
  });
  return best;
}

/// Uniform k-subset of [n]; the objective is left unevaluated (NaN).
template <typename Scalar = double>
Schedule<Scalar> random_schedule(Eigen::Index n, Eigen::Index k, std::uint64_t seed) {
  check_budget(n, k);
  std::vector<Eigen::Index> pool(static_cast<std::size_t>(n));
  std::iota(pool.begin(), pool.end(), Eigen::Index{0});
  Rng rng = make_rng(seed);
  Schedule<Scalar> out;
  out.indices = sample_without_replacement(rng, std::move(pool), static_cast<std::size_t>(k));
  out.method = Method::random_uniform;
  out.seed = seed;
  return out;
}

/// Fills objective and filtered covariance of `schedule` by direct inversion.
template <typename Scalar, typename DerivedP, typename DerivedA>
Schedule<Scalar> evaluate(Schedule<Scalar> schedule, const Eigen::MatrixBase<DerivedP>& P_pred,
                          const Eigen::MatrixBase<DerivedA>& A, Scalar sigma) {
  auto state = direct_fisher_state(P_pred, A, std::span<const Eigen::Index>(schedule.indices), sigma);
  schedule.objective = objective(state);
  schedule.filtered = std::move(state.inverse_fisher);
  return schedule;
}

// ---------------------------------------------------------------------------
// Guarantee arithmetic
// ---------------------------------------------------------------------------

struct Guarantee {
  double alpha = 0.0;    // clamped to >= 0
  double raw = 0.0;      // before clamping
  bool vacuous = false;  // raw <= 0
};

/// alpha = 1 - e^{-1/c} - epsilon^beta / c, with c taken as max(1, c).
inline Guarantee guarantee_alpha(double c, double epsilon, double beta) {
  c = std::max(1.0, c);
  Guarantee g;
  g.raw = 1.0 - std::exp(-1.0 / c) - std::pow(epsilon, beta) / c;
  g.vacuous = g.raw <= 0.0;
  g.alpha = std::max(0.0, g.raw);
  return g;
}

/// The MSE-bound variant, with plain epsilon in place of epsilon^beta.
inline Guarantee guarantee_alpha_mse(double c, double epsilon) { return guarantee_alpha(c, epsilon, 1.0); }

/// beta = 1 + max{0, s/(2n) - 1/(2(n-s))}; 1 when s >= n.
inline double sampling_beta(Eigen::Index s, Eigen::Index n) {
  if (s < 1 || n < 1) throw InvalidParams("sampling_beta requires s >= 1 and n >= 1");
  if (s >= n) return 1.0;
  const double sd = static_cast<double>(s);
  const double nd = static_cast<double>(n);
  return 1.0 + std::max(0.0, sd / (2.0 * nd) - 1.0 / (2.0 * (nd - sd)));
}

/// Upper bound on the expected MSE: alpha MSE_o + (1 - alpha) Tr(P_{t|t-1}).
inline double mse_bound(double alpha, double mse_opt, double trace_P_pred) {
  return alpha * mse_opt + (1.0 - alpha) * trace_P_pred;
}

}  // namespace ssched
