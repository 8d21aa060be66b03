#pragma once

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "ssched/core.hpp"
#include "ssched/curvature.hpp"
#include "ssched/random.hpp"
#include "ssched/scheduler.hpp"

namespace ssched {

/// One sensing unit: local observation rows h_{i_k} (|L_i| x n), its noise
/// std sigma_i, and its current inverse Fisher matrix F_{i,t}^{-1} (after
/// local measurements, before any exchange).
template <typename Scalar>
struct ExchangeNode {
  Matrix<Scalar> H;
  Scalar sigma = Scalar(1);
  Matrix<Scalar> inverse_fisher;

  Eigen::Index local_size() const { return H.rows(); }
};

template <typename Scalar>
struct ExchangeNetwork {
  std::vector<ExchangeNode<Scalar>> nodes;
  Matrix<Scalar> transition;     // state-transition matrix
  Matrix<Scalar> process_noise;  // Q

  Eigen::Index state_dim() const { return nodes.empty() ? 0 : nodes.front().inverse_fisher.rows(); }
  int size() const { return static_cast<int>(nodes.size()); }
};

/// Delivery of source node `src`'s measurement `meas` (0-based row of its H)
/// to destination node `dst`.
struct ExchangeTriplet {
  int dst = 0;
  int src = 0;
  Eigen::Index meas = 0;

  friend auto operator<=>(const ExchangeTriplet&, const ExchangeTriplet&) = default;
};

template <typename Scalar>
void validate(const ExchangeNetwork<Scalar>& net) {
  if (net.nodes.empty()) throw InvalidParams("network has no nodes");
  const Eigen::Index n = net.state_dim();
  for (std::size_t i = 0; i < net.nodes.size(); ++i) {
    const auto& node = net.nodes[i];
    const std::string tag = "node " + std::to_string(i);
    if (node.local_size() < 1) throw InvalidParams(tag + ": needs at least one local measurement");
    if (node.H.cols() != n) throw InvalidParams(tag + ": observation rows must have length n");
    if (!(node.sigma > Scalar(0))) throw InvalidParams(tag + ": sigma must be positive");
    if (node.inverse_fisher.rows() != n) throw InvalidParams(tag + ": inverse Fisher must be n x n");
    validate_spd(node.inverse_fisher, "node inverse Fisher");
  }
}

/// Every (dst, src, meas) with dst != src and meas < |L_src|, in
/// lexicographic order.
template <typename Scalar>
std::vector<ExchangeTriplet> admissible_triplets(const ExchangeNetwork<Scalar>& net) {
  std::vector<ExchangeTriplet> out;
  for (int dst = 0; dst < net.size(); ++dst) {
    for (int src = 0; src < net.size(); ++src) {
      if (src == dst) continue;
      for (Eigen::Index k = 0; k < net.nodes[static_cast<std::size_t>(src)].local_size(); ++k) {
        out.push_back({dst, src, k});
      }
    }
  }
  return out;
}

template <typename Scalar>
void check_triplet(const ExchangeNetwork<Scalar>& net, const ExchangeTriplet& t) {
  const bool ok = t.dst >= 0 && t.dst < net.size() && t.src >= 0 && t.src < net.size() && t.dst != t.src &&
                  t.meas >= 0 && t.meas < net.nodes[static_cast<std::size_t>(t.src)].local_size();
  if (!ok) {
    throw InvalidTriplet("inadmissible triplet (" + std::to_string(t.dst) + "," + std::to_string(t.src) + "," +
                         std::to_string(t.meas) + ")");
  }
}

/// Balance-regularizer gain log(1 + 1/(|O_dst| + |L_dst|)). Independent of
/// which measurement is delivered.
inline double g_marginal(std::span<const Eigen::Index> received, std::span<const Eigen::Index> local_sizes, int dst) {
  const auto d = static_cast<std::size_t>(dst);
  if (local_sizes[d] < 1) throw InvalidParams("g_marginal: |L_i| must be >= 1");
  return std::log1p(1.0 / static_cast<double>(received[d] + local_sizes[d]));
}

/// g(S) = sum_i log(1 + |O_i| / |L_i|).
inline double g_value(std::span<const Eigen::Index> received, std::span<const Eigen::Index> local_sizes) {
  double g = 0.0;
  for (std::size_t i = 0; i < received.size(); ++i) {
    g += std::log1p(static_cast<double>(received[i]) / static_cast<double>(local_sizes[i]));
  }
  return g;
}

/// Working state of the exchange scheduler: per-node F_{i,S}^{-1} and
/// receive counts |O_i|.
template <typename Scalar>
struct ExchangeState {
  std::vector<Matrix<Scalar>> inverse_fisher;
  std::vector<Eigen::Index> received;
  std::vector<Eigen::Index> local_sizes;
  std::vector<ExchangeTriplet> selected;

  bool contains(const ExchangeTriplet& t) const {
    return std::find(selected.begin(), selected.end(), t) != selected.end();
  }
};

template <typename Scalar>
ExchangeState<Scalar> make_exchange_state(const ExchangeNetwork<Scalar>& net) {
  ExchangeState<Scalar> st;
  for (const auto& node : net.nodes) {
    st.inverse_fisher.push_back(node.inverse_fisher);
    st.received.push_back(0);
    st.local_sizes.push_back(node.local_size());
  }
  return st;
}

/// Gain to node dst's objective from receiving h = H_src.row(meas):
///   h^T F^{-2} h / (sigma_src^2 + h^T F^{-1} h).
template <typename Scalar>
Scalar f_marginal(const ExchangeNetwork<Scalar>& net, const ExchangeState<Scalar>& st, const ExchangeTriplet& t) {
  check_triplet(net, t);
  const auto& src = net.nodes[static_cast<std::size_t>(t.src)];
  const Vector<Scalar> h = src.H.row(t.meas).transpose();
  const Vector<Scalar> v = st.inverse_fisher[static_cast<std::size_t>(t.dst)] * h;
  return v.squaredNorm() / (src.sigma * src.sigma + h.dot(v));
}

template <typename Scalar>
Scalar utility_marginal(const ExchangeNetwork<Scalar>& net, const ExchangeState<Scalar>& st,
                        const ExchangeTriplet& t, Scalar gamma) {
  const Scalar f = f_marginal(net, st, t);
  return f + gamma * Scalar(g_marginal(st.received, st.local_sizes, t.dst));
}

/// Adds `t` to the schedule: rank-one downdate of F_dst^{-1} and |O_dst| += 1.
template <typename Scalar>
ExchangeState<Scalar> apply_triplet(const ExchangeNetwork<Scalar>& net, ExchangeState<Scalar> st,
                                    const ExchangeTriplet& t) {
  check_triplet(net, t);
  if (st.contains(t)) throw DuplicateSelection("triplet already scheduled");
  const auto& src = net.nodes[static_cast<std::size_t>(t.src)];
  const Vector<Scalar> h = src.H.row(t.meas).transpose();
  auto& Finv = st.inverse_fisher[static_cast<std::size_t>(t.dst)];
  const Vector<Scalar> v = Finv * h;
  Finv.noalias() -= (v * v.transpose()) / (src.sigma * src.sigma + h.dot(v));
  Finv = symmetrize(Finv);
  ++st.received[static_cast<std::size_t>(t.dst)];
  st.selected.push_back(t);
  return st;
}

/// Per-node F_{i,S}^{-1} for an arbitrary triplet set, by direct inversion.
template <typename Scalar>
std::vector<Matrix<Scalar>> direct_exchange_covariances(const ExchangeNetwork<Scalar>& net,
                                                        std::span<const ExchangeTriplet> triplets) {
  std::vector<Matrix<Scalar>> fisher;
  std::vector<char> touched(net.nodes.size(), 0);
  for (const auto& node : net.nodes) fisher.push_back(spd_inverse(node.inverse_fisher));
  for (const auto& t : triplets) {
    check_triplet(net, t);
    const auto& src = net.nodes[static_cast<std::size_t>(t.src)];
    fisher[static_cast<std::size_t>(t.dst)].noalias() +=
        src.H.row(t.meas).transpose() * src.H.row(t.meas) / (src.sigma * src.sigma);
    touched[static_cast<std::size_t>(t.dst)] = 1;
  }
  // Nodes that receive nothing keep their covariance bit for bit.
  for (std::size_t i = 0; i < fisher.size(); ++i) {
    fisher[i] = touched[i] ? spd_inverse(fisher[i]) : net.nodes[i].inverse_fisher;
  }
  return fisher;
}

/// u(S) = f(S) + gamma g(S), evaluated from scratch.
template <typename Scalar>
Scalar utility_direct(const ExchangeNetwork<Scalar>& net, std::span<const ExchangeTriplet> triplets, Scalar gamma) {
  const auto cov = direct_exchange_covariances(net, triplets);
  Scalar f = 0;
  std::vector<Eigen::Index> received(net.nodes.size(), 0), local(net.nodes.size(), 0);
  for (std::size_t i = 0; i < net.nodes.size(); ++i) {
    f += net.nodes[i].inverse_fisher.trace() - cov[i].trace();
    local[i] = net.nodes[i].local_size();
  }
  for (const auto& t : triplets) ++received[static_cast<std::size_t>(t.dst)];
  return f + gamma * Scalar(g_value(received, local));
}

template <typename Scalar>
struct ExchangeSchedule {
  std::vector<ExchangeTriplet> triplets;  // selection order
  Scalar gamma = 0;
  Eigen::Index budget = 0;
  bool truncated = false;  // budget exceeded the admissible-triplet count
  Scalar utility = 0;
  std::vector<Scalar> per_node_mse;           // Tr(F_{i,S}^{-1})
  std::vector<Matrix<Scalar>> inverse_fisher;  // F_{i,S}^{-1}
  std::vector<Eigen::Index> received;
};

/// Greedy exchange scheduling: K rounds, each picking the admissible
/// unselected triplet with the largest utility_marginal (ties to the
/// lexicographically smallest (dst, src, meas)), then downdating F_dst^{-1}.
/// Only candidates whose destination changed are re-evaluated per round.
template <typename Scalar>
ExchangeSchedule<Scalar> greedy_exchange(const ExchangeNetwork<Scalar>& net, Eigen::Index budget, Scalar gamma,
                                         std::uint64_t /*seed*/ = 0) {
  validate(net);
  if (budget < 1) throw InvalidParams("budget K must be >= 1");
  if (gamma < Scalar(0)) throw InvalidParams("gamma must be >= 0");
  const std::vector<ExchangeTriplet> ground = admissible_triplets(net);
  if (ground.empty()) throw InvalidParams("network has no admissible triplets");

  ExchangeSchedule<Scalar> out;
  out.gamma = gamma;
  out.budget = budget;
  out.truncated = static_cast<std::size_t>(budget) > ground.size();
  const std::size_t rounds = std::min(static_cast<std::size_t>(budget), ground.size());

  ExchangeState<Scalar> st = make_exchange_state(net);
  std::vector<Scalar> fgain(ground.size());
  std::vector<char> taken(ground.size(), 0);
  for (std::size_t c = 0; c < ground.size(); ++c) fgain[c] = f_marginal(net, st, ground[c]);

  Scalar u = 0;
  for (std::size_t r = 0; r < rounds; ++r) {
    std::size_t best = ground.size();
    Scalar best_gain = -std::numeric_limits<Scalar>::infinity();
    for (std::size_t c = 0; c < ground.size(); ++c) {
      if (taken[c]) continue;
      const Scalar gain = fgain[c] + gamma * Scalar(g_marginal(st.received, st.local_sizes, ground[c].dst));
      if (gain > best_gain) {
        best_gain = gain;
        best = c;
      }
    }
    const int dst = ground[best].dst;
    st = apply_triplet(net, std::move(st), ground[best]);
    taken[best] = 1;
    u += best_gain;
    for (std::size_t c = 0; c < ground.size(); ++c) {
      if (!taken[c] && ground[c].dst == dst) fgain[c] = f_marginal(net, st, ground[c]);
    }
  }

  out.triplets = st.selected;
  out.utility = u;
  out.received = st.received;
  for (const auto& m : st.inverse_fisher) out.per_node_mse.push_back(m.trace());
  out.inverse_fisher = std::move(st.inverse_fisher);
  return out;
}

/// Exhaustive search over all K-subsets of admissible triplets maximizing
/// u by direct evaluation. Ties resolve to the lexicographically smallest set.
template <typename Scalar>
ExchangeSchedule<Scalar> brute_force_exchange(const ExchangeNetwork<Scalar>& net, Eigen::Index budget, Scalar gamma,
                                              double cap = kDefaultBruteForceCap) {
  validate(net);
  const std::vector<ExchangeTriplet> ground = admissible_triplets(net);
  const auto N = static_cast<Eigen::Index>(ground.size());
  const Eigen::Index K = std::min(budget, N);
  if (K < 1) throw InvalidParams("budget K must be >= 1");
  if (binomial(N, K) > cap) throw InstanceTooLarge("exchange brute force exceeds the enumeration cap");

  ExchangeSchedule<Scalar> best;
  best.gamma = gamma;
  best.budget = budget;
  best.truncated = budget > N;
  best.utility = -std::numeric_limits<Scalar>::infinity();
  std::vector<ExchangeTriplet> pick(static_cast<std::size_t>(K));
  for_each_combination(N, K, [&](std::span<const Eigen::Index> idx) {
    for (std::size_t r = 0; r < idx.size(); ++r) pick[r] = ground[static_cast<std::size_t>(idx[r])];
    const Scalar u = utility_direct(net, std::span<const ExchangeTriplet>(pick), gamma);
    if (u > best.utility) {
      best.utility = u;
      best.triplets = pick;
    }
  });
  best.inverse_fisher = direct_exchange_covariances(net, std::span<const ExchangeTriplet>(best.triplets));
  best.received.assign(net.nodes.size(), 0);
  for (const auto& t : best.triplets) ++best.received[static_cast<std::size_t>(t.dst)];
  for (const auto& m : best.inverse_fisher) best.per_node_mse.push_back(m.trace());
  return best;
}

/// Marginal-gain table of u over the admissible-triplet ground set, for
/// exact curvature at toy scale. Bit c of a mask selects ground[c].
template <typename Scalar>
std::vector<double> exchange_gain_table(const ExchangeNetwork<Scalar>& net, Scalar gamma) {
  const std::vector<ExchangeTriplet> ground = admissible_triplets(net);
  const int N = static_cast<int>(ground.size());
  std::vector<double> gains(static_cast<std::size_t>(1u << N) * N, 0.0);
  std::vector<ExchangeTriplet> subset;
  for (std::uint32_t mask = 0; mask < (std::uint32_t{1} << N); ++mask) {
    subset.clear();
    for (int c = 0; c < N; ++c) {
      if (mask & (std::uint32_t{1} << c)) subset.push_back(ground[static_cast<std::size_t>(c)]);
    }
    ExchangeState<Scalar> st = make_exchange_state(net);
    st.inverse_fisher = direct_exchange_covariances(net, std::span<const ExchangeTriplet>(subset));
    for (const auto& t : subset) ++st.received[static_cast<std::size_t>(t.dst)];
    for (int c = 0; c < N; ++c) {
      if (!(mask & (std::uint32_t{1} << c))) {
        gains[static_cast<std::size_t>(mask) * N + c] =
            static_cast<double>(utility_marginal(net, st, ground[static_cast<std::size_t>(c)], gamma));
      }
    }
  }
  return gains;
}

/// Exact curvature of u = f + gamma g (gamma = 0 gives the curvature of f).
template <typename Scalar>
CurvatureReport exact_exchange_curvature(const ExchangeNetwork<Scalar>& net, Scalar gamma, int cap = 16) {
  validate(net);
  const int N = static_cast<int>(admissible_triplets(net).size());
  if (N > cap || N > 24) {
    throw InstanceTooLarge("exact exchange curvature: " + std::to_string(N) + " triplets exceed cap " +
                           std::to_string(cap));
  }
  return exact_curvature_from_gains(N, exchange_gain_table(net, gamma));
}

struct Proposition1Result {
  bool condition_holds = false;
  double bound = 0.0;  // (2 lambda_M / lambda_m)^3, reported even when inapplicable
  double lambda_M = 0.0;
  double lambda_m = 0.0;
  double spectral_lhs = 0.0;  // lambda_max(H^T H) / sigma^2
};

/// Curvature bound for the network objective. Requires a common noise level:
/// if lambda_max(H^T H) / sigma^2 <= lambda_M then C_f <= (2 lambda_M / lambda_m)^3
/// with lambda_M = max_i lambda_max(F_i), lambda_m = min_i lambda_min(F_i).
template <typename Scalar, typename DerivedH>
Proposition1Result proposition1_bound(const ExchangeNetwork<Scalar>& net, const Eigen::MatrixBase<DerivedH>& H_stacked) {
  validate(net);
  const Scalar sigma = net.nodes.front().sigma;
  for (const auto& node : net.nodes) {
    if (std::abs(node.sigma - sigma) > Scalar(1e-12) * std::max<Scalar>(Scalar(1), sigma)) {
      throw InvalidParams("proposition 1 bound requires a common noise level across nodes");
    }
  }
  Proposition1Result r;
  r.lambda_M = -std::numeric_limits<double>::infinity();
  r.lambda_m = std::numeric_limits<double>::infinity();
  for (const auto& node : net.nodes) {
    // Eigenvalues of F_i are reciprocals of those of F_i^{-1}.
    Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> es(node.inverse_fisher, Eigen::EigenvaluesOnly);
    r.lambda_M = std::max(r.lambda_M, 1.0 / static_cast<double>(es.eigenvalues().minCoeff()));
    r.lambda_m = std::min(r.lambda_m, 1.0 / static_cast<double>(es.eigenvalues().maxCoeff()));
  }
  const Matrix<Scalar> gram = H_stacked.transpose() * H_stacked;
  r.spectral_lhs = static_cast<double>(lambda_max(gram)) / static_cast<double>(sigma * sigma);
  r.condition_holds = r.spectral_lhs <= r.lambda_M;
  r.bound = std::pow(2.0 * r.lambda_M / r.lambda_m, 3);
  return r;
}

template <typename Scalar>
Matrix<Scalar> stacked_observations(const ExchangeNetwork<Scalar>& net) {
  Eigen::Index rows = 0;
  for (const auto& node : net.nodes) rows += node.local_size();
  Matrix<Scalar> H(rows, net.state_dim());
  Eigen::Index r = 0;
  for (const auto& node : net.nodes) {
    H.middleRows(r, node.local_size()) = node.H;
    r += node.local_size();
  }
  return H;
}

template <typename Scalar>
Proposition1Result proposition1_bound(const ExchangeNetwork<Scalar>& net) {
  return proposition1_bound(net, stacked_observations(net));
}

struct BalanceMetrics {
  double total_mse = 0.0;
  double pairwise_distance_sum = 0.0;  // sum_{i<j} |MSE_i - MSE_j|
};

template <typename Scalar>
BalanceMetrics balance_metrics(std::span<const Scalar> per_node_mse) {
  BalanceMetrics b;
  for (std::size_t i = 0; i < per_node_mse.size(); ++i) {
    b.total_mse += static_cast<double>(per_node_mse[i]);
    for (std::size_t j = i + 1; j < per_node_mse.size(); ++j) {
      b.pairwise_distance_sum += std::abs(static_cast<double>(per_node_mse[i] - per_node_mse[j]));
    }
  }
  return b;
}

template <typename Scalar>
BalanceMetrics balance_metrics(const ExchangeSchedule<Scalar>& s) {
  return balance_metrics(std::span<const Scalar>(s.per_node_mse));
}

// ---------------------------------------------------------------------------
// Multi-step operation
// ---------------------------------------------------------------------------

/// F^{-1} = (P_pred^{-1} + sigma^{-2} H^T H)^{-1}: the node's state after its
/// own measurements.
template <typename Scalar>
Matrix<Scalar> local_inverse_fisher(const Matrix<Scalar>& P_pred, const Matrix<Scalar>& H, Scalar sigma) {
  return filtered_covariance(P_pred, H, sigma);
}

/// Next step's network: P_i = A P_{L_i u O_i} A^T + Q per node, followed by
/// the local measurement update.
template <typename Scalar>
ExchangeNetwork<Scalar> advance_network(const ExchangeNetwork<Scalar>& net, const std::vector<Matrix<Scalar>>& filtered) {
  ExchangeNetwork<Scalar> next = net;
  for (std::size_t i = 0; i < net.nodes.size(); ++i) {
    Matrix<Scalar> P = net.transition * filtered[i] * net.transition.transpose() + net.process_noise;
    next.nodes[i].inverse_fisher = local_inverse_fisher(symmetrize(P), net.nodes[i].H, net.nodes[i].sigma);
  }
  return next;
}

/// Network with identical dynamics for every node and random partial
/// observation patterns: node i observes `ranks[i]` distinct state
/// components (rows of the identity).
struct ExchangeSimulationConfig {
  Eigen::Index state_dim = 50;
  std::vector<Eigen::Index> ranks{21, 37, 5};
  double transition_scale = 0.8;
  double process_noise = 0.2;      // Q = q I
  double measurement_noise = 0.05;  // R_i = r I (variance)
  double initial_variance = 1.0;    // Sigma_x = s I
  std::size_t horizon = 20;
};

/// Selection rows for `rank` distinct components of an n-dimensional state.
inline MatrixXd random_selection_rows(Rng& rng, Eigen::Index state_dim, Eigen::Index rank) {
  if (rank < 1 || rank > state_dim) throw InvalidParams("observation rank must be in [1, n]");
  std::vector<Eigen::Index> comps(static_cast<std::size_t>(state_dim));
  std::iota(comps.begin(), comps.end(), Eigen::Index{0});
  comps = sample_without_replacement(rng, std::move(comps), static_cast<std::size_t>(rank));
  std::sort(comps.begin(), comps.end());
  MatrixXd H = MatrixXd::Zero(rank, state_dim);
  for (Eigen::Index r = 0; r < rank; ++r) H(r, comps[static_cast<std::size_t>(r)]) = 1.0;
  return H;
}

/// The t = 1 network of a simulation run: observation patterns drawn from
/// `seed`, F_{i,1}^{-1} from the prior Sigma_x and local measurements.
inline ExchangeNetwork<double> make_simulation_network(const ExchangeSimulationConfig& cfg, std::uint64_t seed) {
  if (cfg.ranks.empty()) throw InvalidParams("simulation needs at least one node");
  if (!(cfg.measurement_noise > 0.0) || !(cfg.process_noise > 0.0) || !(cfg.initial_variance > 0.0)) {
    throw InvalidParams("simulation noise levels must be positive");
  }
  const Eigen::Index n = cfg.state_dim;
  ExchangeNetwork<double> net;
  net.transition = cfg.transition_scale * MatrixXd::Identity(n, n);
  net.process_noise = cfg.process_noise * MatrixXd::Identity(n, n);
  const MatrixXd prior = cfg.initial_variance * MatrixXd::Identity(n, n);
  Rng rng = make_rng(seed, {0x0b5u});
  for (Eigen::Index rank : cfg.ranks) {
    ExchangeNode<double> node;
    node.H = random_selection_rows(rng, n, rank);
    node.sigma = std::sqrt(cfg.measurement_noise);
    node.inverse_fisher = local_inverse_fisher(prior, node.H, node.sigma);
    net.nodes.push_back(std::move(node));
  }
  return net;
}

struct ExchangeStepRecord {
  std::size_t t = 0;
  std::vector<double> per_node_mse;  // after exchange
  BalanceMetrics balance;
  double utility = 0.0;
};

/// Runs the exchange scheduler for cfg.horizon steps (t = 1..T).
inline std::vector<ExchangeStepRecord> simulate_exchange(const ExchangeSimulationConfig& cfg, Eigen::Index budget,
                                                         double gamma, std::uint64_t seed) {
  ExchangeNetwork<double> net = make_simulation_network(cfg, seed);
  std::vector<ExchangeStepRecord> out;
  for (std::size_t t = 1; t <= cfg.horizon; ++t) {
    const auto sched = greedy_exchange(net, budget, gamma);
    ExchangeStepRecord rec;
    rec.t = t;
    rec.per_node_mse = sched.per_node_mse;
    rec.balance = balance_metrics(sched);
    rec.utility = sched.utility;
    out.push_back(std::move(rec));
    if (t < cfg.horizon) net = advance_network(net, sched.inverse_fisher);
  }
  return out;
}

}  // namespace ssched
