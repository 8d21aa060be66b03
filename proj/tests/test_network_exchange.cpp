#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "oracles.hpp"
#include "ssched/network_exchange.hpp"

using namespace ssched;
using oracle::rel_err;

namespace {

// Toy network: node i has `sizes[i]` random local rows and a random prior.
ExchangeNetwork<double> random_network(Rng& rng, Eigen::Index n, const std::vector<Eigen::Index>& sizes,
                                       bool common_sigma = false, double fisher_lo = 0.2, double fisher_hi = 2.0,
                                       double h_scale = 1.0) {
  ExchangeNetwork<double> net;
  net.transition = MatrixXd::Identity(n, n);
  net.process_noise = MatrixXd::Identity(n, n);
  for (Eigen::Index L : sizes) {
    ExchangeNode<double> node;
    node.H = oracle::random_matrix(rng, L, n, h_scale);
    node.sigma = common_sigma ? 0.7 : 0.3 + uniform_unit(rng);
    node.inverse_fisher = oracle::random_spd(rng, n, fisher_lo, fisher_hi);
    net.nodes.push_back(std::move(node));
  }
  return net;
}

// Per-node objective difference for node dst by LU inversion of its Fisher matrix.
double f_direct(const ExchangeNetwork<double>& net, const std::vector<ExchangeTriplet>& S) {
  double f = 0.0;
  for (int i = 0; i < net.size(); ++i) {
    MatrixXd F = oracle::lu_inverse(net.nodes[static_cast<std::size_t>(i)].inverse_fisher);
    for (const auto& t : S) {
      if (t.dst != i) continue;
      const auto& src = net.nodes[static_cast<std::size_t>(t.src)];
      F += src.H.row(t.meas).transpose() * src.H.row(t.meas) / (src.sigma * src.sigma);
    }
    f += net.nodes[static_cast<std::size_t>(i)].inverse_fisher.trace() - oracle::lu_inverse(F).trace();
  }
  return f;
}

std::vector<ExchangeTriplet> random_triplets(Rng& rng, const ExchangeNetwork<double>& net, std::size_t count) {
  return sample_without_replacement(rng, admissible_triplets(net), count);
}

}  // namespace

TEST_CASE("g_marginal: closed-form values") {
  const std::vector<Eigen::Index> received{0, 3}, local{1, 5};
  CHECK(g_marginal(received, local, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(g_marginal(received, local, 1) == doctest::Approx(std::log(9.0 / 8.0)).epsilon(1e-15));
  CHECK(g_marginal(received, local, 1) == doctest::Approx(0.1178).epsilon(1e-3));
}

TEST_CASE("g_marginal: depends on the destination only") {
  Rng rng = make_rng(31);
  const auto net = random_network(rng, 3, {2, 3, 1});
  auto st = make_exchange_state(net);
  st = apply_triplet(net, std::move(st), {0, 1, 2});
  for (const auto& t : admissible_triplets(net)) {
    if (st.contains(t)) continue;
    CHECK(utility_marginal(net, st, t, 1.0) - f_marginal(net, st, t) ==
          doctest::Approx(g_marginal(st.received, st.local_sizes, t.dst)).epsilon(1e-12));
  }
  // Strictly decreasing in |O_dst|.
  std::vector<Eigen::Index> local{4};
  double prev = 1e300;
  for (Eigen::Index o = 0; o < 50; ++o) {
    std::vector<Eigen::Index> rec{o};
    const double g = g_marginal(rec, local, 0);
    CHECK(g > 0.0);
    CHECK(g < prev);
    prev = g;
  }
}

TEST_CASE("g submodularity along sampled chains is exact") {
  Rng rng = make_rng(32);
  for (int chain = 0; chain < 300; ++chain) {
    const auto net = random_network(rng, 2, {1 + static_cast<Eigen::Index>(uniform_index(rng, 0, 3)),
                                             1 + static_cast<Eigen::Index>(uniform_index(rng, 0, 3)),
                                             1 + static_cast<Eigen::Index>(uniform_index(rng, 0, 3))});
    const auto order = random_triplets(rng, net, admissible_triplets(net).size());
    std::vector<Eigen::Index> received(3, 0), local{net.nodes[0].local_size(), net.nodes[1].local_size(),
                                                    net.nodes[2].local_size()};
    std::vector<double> prev{g_marginal(received, local, 0), g_marginal(received, local, 1),
                             g_marginal(received, local, 2)};
    for (const auto& t : order) {
      ++received[static_cast<std::size_t>(t.dst)];
      for (int d = 0; d < 3; ++d) {
        const double g = g_marginal(received, local, d);
        CHECK(g <= prev[static_cast<std::size_t>(d)]);
        prev[static_cast<std::size_t>(d)] = g;
      }
    }
  }
}

TEST_CASE("f_marginal: zero row gives zero") {
  Rng rng = make_rng(33);
  auto net = random_network(rng, 3, {2, 2});
  net.nodes[1].H.row(0).setZero();
  CHECK(f_marginal(net, make_exchange_state(net), {0, 1, 0}) == 0.0);
  CHECK(utility_marginal(net, make_exchange_state(net), {0, 1, 0}, 0.0) == 0.0);
  net.nodes[0].H = MatrixXd::Zero(1, 3);
  CHECK(utility_marginal(net, make_exchange_state(net), {1, 0, 0}, 1.0) == doctest::Approx(std::log(1.5)));
  ExchangeNetwork<double> one = net;
  one.nodes[1].H = MatrixXd::Zero(1, 3);
  CHECK(utility_marginal(one, make_exchange_state(one), {0, 1, 0}, 1.0) == doctest::Approx(std::log(2.0)));
}

TEST_CASE("f_marginal: agrees with the single-sensor scheduler gain") {
  Rng rng = make_rng(34);
  for (int trial = 0; trial < 100; ++trial) {
    const auto net = random_network(rng, 4, {1, 3});
    const auto st = make_exchange_state(net);
    const auto fs = make_fisher_state(net.nodes[0].inverse_fisher, net.nodes[1].sigma);
    for (Eigen::Index k = 0; k < 3; ++k) {
      CHECK(rel_err(f_marginal(net, st, {0, 1, k}), marginal_gain(fs, net.nodes[1].H.row(k))) < 1e-10);
    }
  }
}

TEST_CASE("f_marginal: equals the direct-inversion objective difference") {
  Rng rng = make_rng(35);
  for (int trial = 0; trial < 300; ++trial) {
    const auto net = random_network(rng, 4, {2, 3, 2});
    const auto all = admissible_triplets(net);
    auto S = random_triplets(rng, net, uniform_index(rng, 0, all.size() - 1));
    auto st = make_exchange_state(net);
    for (const auto& t : S) st = apply_triplet(net, std::move(st), t);
    ExchangeTriplet next{};
    for (const auto& t : all)
      if (!st.contains(t)) next = t;
    auto S2 = S;
    S2.push_back(next);
    CHECK(rel_err(f_marginal(net, st, next), f_direct(net, S2) - f_direct(net, S), 1e-14) < 1e-8);
  }
}

TEST_CASE("utility_marginal is additive in gamma") {
  Rng rng = make_rng(36);
  for (int trial = 0; trial < 50; ++trial) {
    const auto net = random_network(rng, 3, {2, 1, 3});
    auto st = make_exchange_state(net);
    for (const auto& t : random_triplets(rng, net, 4)) st = apply_triplet(net, std::move(st), t);
    for (const auto& t : admissible_triplets(net)) {
      if (st.contains(t)) continue;
      const double expected = f_marginal(net, st, t) + 200.0 * g_marginal(st.received, st.local_sizes, t.dst);
      CHECK(std::abs(utility_marginal(net, st, t, 200.0) - expected) <= 1e-12 * expected);
      CHECK(utility_marginal(net, st, t, 0.0) == f_marginal(net, st, t));
    }
  }
}

TEST_CASE("triplet admissibility") {
  Rng rng = make_rng(37);
  const auto net = random_network(rng, 2, {2, 3});
  const auto all = admissible_triplets(net);
  CHECK(all.size() == 5);
  CHECK(std::is_sorted(all.begin(), all.end()));
  const auto st = make_exchange_state(net);
  CHECK_THROWS_AS(f_marginal(net, st, {0, 0, 0}), InvalidTriplet);
  CHECK_THROWS_AS(f_marginal(net, st, {0, 1, 3}), InvalidTriplet);
  CHECK_THROWS_AS(f_marginal(net, st, {2, 1, 0}), InvalidTriplet);
  CHECK_THROWS_AS(f_marginal(net, st, {1, 0, -1}), InvalidTriplet);
  auto st2 = apply_triplet(net, st, {1, 0, 1});
  CHECK_THROWS_AS(apply_triplet(net, st2, {1, 0, 1}), DuplicateSelection);
  // The same measurement may go to another destination.
  const auto net3 = random_network(rng, 2, {1, 1, 1});
  auto st3 = apply_triplet(net3, make_exchange_state(net3), {1, 0, 0});
  CHECK_NOTHROW(apply_triplet(net3, st3, {2, 0, 0}));
}

TEST_CASE("u of the empty set is zero and selected marginals are positive") {
  Rng rng = make_rng(38);
  for (int trial = 0; trial < 30; ++trial) {
    const auto net = random_network(rng, 3, {2, 2, 3});
    CHECK(utility_direct(net, std::span<const ExchangeTriplet>{}, 200.0) == 0.0);
    for (double gamma : {0.0, 0.5, 200.0}) {
      auto st = make_exchange_state(net);
      for (const auto& t : random_triplets(rng, net, admissible_triplets(net).size())) {
        const double u = utility_marginal(net, st, t, gamma);
        if (gamma > 0.0)
          CHECK(u > 0.0);
        else
          CHECK(u >= 0.0);
        st = apply_triplet(net, std::move(st), t);
      }
    }
  }
}

TEST_CASE("greedy_exchange: utility and per-node MSE agree with a from-scratch evaluation") {
  Rng rng = make_rng(39);
  for (int trial = 0; trial < 40; ++trial) {
    const auto net = random_network(rng, 4, {3, 2, 4});
    for (double gamma : {0.0, 1.0, 200.0}) {
      const Eigen::Index K = 1 + static_cast<Eigen::Index>(uniform_index(rng, 0, 10));
      const auto s = greedy_exchange(net, K, gamma);
      REQUIRE(s.triplets.size() == static_cast<std::size_t>(K));
      CHECK_FALSE(s.truncated);
      const double direct = utility_direct(net, std::span<const ExchangeTriplet>(s.triplets), gamma);
      CHECK(rel_err(s.utility, direct) < 1e-8);
      const auto cov = direct_exchange_covariances(net, std::span<const ExchangeTriplet>(s.triplets));
      for (std::size_t i = 0; i < cov.size(); ++i) CHECK(rel_err(s.per_node_mse[i], cov[i].trace()) < 1e-8);
      auto sorted = s.triplets;
      std::sort(sorted.begin(), sorted.end());
      CHECK(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());
    }
  }
}

TEST_CASE("greedy_exchange: each pick is the argmax of the marginal utility") {
  Rng rng = make_rng(40);
  const auto net = random_network(rng, 3, {2, 3, 2});
  const double gamma = 0.3;
  const auto s = greedy_exchange(net, 8, gamma);
  auto st = make_exchange_state(net);
  for (const auto& pick : s.triplets) {
    double best = -1.0;
    ExchangeTriplet arg{};
    for (const auto& t : admissible_triplets(net)) {
      if (st.contains(t)) continue;
      const double u = utility_marginal(net, st, t, gamma);
      if (u > best) {
        best = u;
        arg = t;
      }
    }
    CHECK(pick == arg);
    st = apply_triplet(net, std::move(st), pick);
  }
}

TEST_CASE("greedy_exchange: saturation shares everything everywhere") {
  Rng rng = make_rng(41);
  const auto net = random_network(rng, 3, {2, 1, 2});
  const auto all = admissible_triplets(net);
  const auto s = greedy_exchange(net, static_cast<Eigen::Index>(all.size()), 0.5);
  CHECK(s.triplets.size() == all.size());
  for (int i = 0; i < net.size(); ++i) {
    MatrixXd F = oracle::lu_inverse(net.nodes[static_cast<std::size_t>(i)].inverse_fisher);
    for (int j = 0; j < net.size(); ++j) {
      if (j == i) continue;
      const auto& src = net.nodes[static_cast<std::size_t>(j)];
      F += src.H.transpose() * src.H / (src.sigma * src.sigma);
    }
    CHECK(rel_err(s.inverse_fisher[static_cast<std::size_t>(i)], oracle::lu_inverse(F)) < 1e-8);
  }
}

TEST_CASE("greedy_exchange: budget beyond the ground set truncates and flags") {
  Rng rng = make_rng(42);
  const auto net = random_network(rng, 2, {1, 2});
  const auto s = greedy_exchange(net, 10, 1.0);
  CHECK(s.truncated);
  CHECK(s.triplets.size() == 3);
  CHECK(s.budget == 10);
  CHECK_THROWS_AS(greedy_exchange(net, 0, 1.0), InvalidParams);
  CHECK_THROWS_AS(greedy_exchange(net, 1, -1.0), InvalidParams);
}

TEST_CASE("greedy_exchange: large gamma follows the balance-only greedy") {
  Rng rng = make_rng(43);
  for (int trial = 0; trial < 20; ++trial) {
    const auto net = random_network(rng, 3, {1 + static_cast<Eigen::Index>(uniform_index(rng, 0, 4)),
                                             1 + static_cast<Eigen::Index>(uniform_index(rng, 0, 4)),
                                             1 + static_cast<Eigen::Index>(uniform_index(rng, 0, 4))});
    const auto all = admissible_triplets(net);
    const auto s = greedy_exchange(net, static_cast<Eigen::Index>(all.size()), 1e12);
    // Simulated g-only greedy: the next destination is always one with the
    // smallest |O_i| + |L_i| among nodes that still have something to receive.
    std::vector<Eigen::Index> load, remaining(3, 0);
    for (const auto& node : net.nodes) load.push_back(node.local_size());
    for (const auto& t : all) ++remaining[static_cast<std::size_t>(t.dst)];
    for (const auto& t : s.triplets) {
      Eigen::Index best = std::numeric_limits<Eigen::Index>::max();
      for (std::size_t i = 0; i < 3; ++i)
        if (remaining[i] > 0) best = std::min(best, load[i]);
      CHECK(load[static_cast<std::size_t>(t.dst)] == best);
      ++load[static_cast<std::size_t>(t.dst)];
      --remaining[static_cast<std::size_t>(t.dst)];
    }
  }
}

TEST_CASE("greedy_exchange: two nodes, K = 2, matches exhaustive search when f is modular") {
  // Orthogonal rows and isotropic priors make per-node gains independent.
  ExchangeNetwork<double> net;
  net.transition = MatrixXd::Identity(4, 4);
  net.process_noise = MatrixXd::Identity(4, 4);
  for (int i = 0; i < 2; ++i) {
    ExchangeNode<double> node;
    node.H = MatrixXd::Zero(2, 4);
    node.H(0, 2 * i) = 1.0 + i;
    node.H(1, 2 * i + 1) = 0.5 + 2.0 * i;
    node.sigma = 0.6;
    node.inverse_fisher = (1.0 + 0.5 * i) * MatrixXd::Identity(4, 4);
    net.nodes.push_back(node);
  }
  const auto g = greedy_exchange(net, 2, 0.0);
  const auto b = brute_force_exchange(net, 2, 0.0);
  auto gs = g.triplets;
  std::sort(gs.begin(), gs.end());
  CHECK(gs == b.triplets);
  CHECK(rel_err(g.utility, b.utility) < 1e-10);
}

TEST_CASE("greedy_exchange: two nodes, K = 2, random instances against exhaustive search") {
  Rng rng = make_rng(44);
  for (int trial = 0; trial < 100; ++trial) {
    const auto net = random_network(rng, 3, {2, 2});
    const auto g = greedy_exchange(net, 2, 0.0);
    const auto b = brute_force_exchange(net, 2, 0.0);
    CHECK(g.utility <= b.utility * (1 + 1e-10));
    const double c = exact_exchange_curvature(net, 0.0).c_effective();
    CHECK(g.utility >= (1.0 - std::exp(-1.0 / c)) * b.utility);
  }
}

TEST_CASE("companion guarantee at toy scale") {
  Rng rng = make_rng(45);
  int instances = 0;
  for (int trial = 0; trial < 40; ++trial) {
    const auto net = random_network(rng, 3, {1 + static_cast<Eigen::Index>(uniform_index(rng, 0, 1)),
                                             1 + static_cast<Eigen::Index>(uniform_index(rng, 0, 1)),
                                             1 + static_cast<Eigen::Index>(uniform_index(rng, 0, 1))});
    REQUIRE(admissible_triplets(net).size() <= 12);
    for (double gamma : {0.0, 1.0}) {
      const double c = exact_exchange_curvature(net, gamma).c_effective();
      for (Eigen::Index K = 1; K <= 3; ++K) {
        const auto g = greedy_exchange(net, K, gamma);
        const auto b = brute_force_exchange(net, K, gamma);
        CHECK(g.utility >= (1.0 - std::exp(-1.0 / c)) * b.utility);
        ++instances;
      }
    }
  }
  CHECK(instances == 240);
}

TEST_CASE("exact_exchange_curvature: balance term alone is submodular") {
  Rng rng = make_rng(46);
  auto net = random_network(rng, 2, {2, 1, 2});
  for (auto& node : net.nodes) node.H.setZero();
  const auto rep = exact_exchange_curvature(net, 1.0);
  CHECK(rep.c_max <= 1.0);
  CHECK_THROWS_AS(exact_exchange_curvature(random_network(rng, 2, {5, 5, 5}), 0.0), InstanceTooLarge);
}

TEST_CASE("proposition1_bound: closed-form cases") {
  ExchangeNetwork<double> net;
  net.transition = MatrixXd::Identity(3, 3);
  net.process_noise = MatrixXd::Identity(3, 3);
  for (int i = 0; i < 3; ++i) {
    ExchangeNode<double> node;
    node.H = 0.1 * MatrixXd::Identity(1, 3);
    node.sigma = 1.0;
    node.inverse_fisher = 0.5 * MatrixXd::Identity(3, 3);
    net.nodes.push_back(node);
  }
  auto r = proposition1_bound(net);
  CHECK(r.condition_holds);
  CHECK(r.bound == doctest::Approx(8.0).epsilon(1e-12));
  CHECK(r.lambda_M == doctest::Approx(2.0));

  net.nodes[0].inverse_fisher = 0.25 * MatrixXd::Identity(3, 3);  // lambda_M = 4
  net.nodes[1].inverse_fisher = MatrixXd::Identity(3, 3);          // lambda_m = 1
  r = proposition1_bound(net);
  CHECK(r.bound == doctest::Approx(512.0).epsilon(1e-12));

  net.nodes[0].H = 10.0 * MatrixXd::Identity(1, 3);
  r = proposition1_bound(net);
  CHECK_FALSE(r.condition_holds);
  CHECK(r.bound == doctest::Approx(512.0).epsilon(1e-12));

  net.nodes[2].sigma = 2.0;
  CHECK_THROWS_AS(proposition1_bound(net), InvalidParams);
}

TEST_CASE("proposition1_bound dominates the exact curvature when its condition holds") {
  Rng rng = make_rng(47);
  int applicable = 0;
  for (int trial = 0; trial < 60; ++trial) {
    const auto net = random_network(rng, 2, {1, 2, 1}, true, 0.3, 1.5, 0.4);
    const auto r = proposition1_bound(net);
    if (!r.condition_holds) continue;
    ++applicable;
    CHECK(exact_exchange_curvature(net, 0.0).c_max <= r.bound);
  }
  CHECK(applicable >= 20);
}

TEST_CASE("balance_metrics") {
  const std::vector<double> mse{1.0, 2.0, 4.0};
  const auto b = balance_metrics(std::span<const double>(mse));
  CHECK(b.total_mse == 7.0);
  CHECK(b.pairwise_distance_sum == 6.0);
  const std::vector<double> same(4, 0.3);
  CHECK(balance_metrics(std::span<const double>(same)).pairwise_distance_sum == 0.0);
}

TEST_CASE("simulation network construction") {
  ExchangeSimulationConfig cfg;
  const auto a = make_simulation_network(cfg, 5);
  const auto b = make_simulation_network(cfg, 5);
  REQUIRE(a.size() == 3);
  CHECK(a.nodes[0].local_size() == 21);
  CHECK(a.nodes[1].local_size() == 37);
  CHECK(a.nodes[2].local_size() == 5);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK((a.nodes[i].H.array() == b.nodes[i].H.array()).all());
    // Each row selects one component; components are distinct.
    CHECK((a.nodes[i].H.rowwise().sum().array() == 1.0).all());
    CHECK((a.nodes[i].H.colwise().sum().array() <= 1.0).all());
    CHECK(a.nodes[i].sigma == doctest::Approx(std::sqrt(0.05)));
    // Observed components have variance 1/(1 + 1/0.05), the rest stay at 1.
    CHECK(a.nodes[i].inverse_fisher.trace() ==
          doctest::Approx((50.0 - cfg.ranks[i]) + cfg.ranks[i] / 21.0).epsilon(1e-10));
  }
  const auto c = make_simulation_network(cfg, 6);
  CHECK((a.nodes[0].H.array() != c.nodes[0].H.array()).any());
}

TEST_CASE("advance_network applies prediction then the local update") {
  ExchangeSimulationConfig cfg;
  cfg.state_dim = 6;
  cfg.ranks = {2, 3};
  const auto net = make_simulation_network(cfg, 1);
  std::vector<MatrixXd> filt{net.nodes[0].inverse_fisher, net.nodes[1].inverse_fisher};
  const auto next = advance_network(net, filt);
  for (std::size_t i = 0; i < 2; ++i) {
    const MatrixXd P = 0.64 * filt[i] + 0.2 * MatrixXd::Identity(6, 6);
    CHECK(rel_err(next.nodes[i].inverse_fisher, oracle::filtered(P, net.nodes[i].H, net.nodes[i].sigma)) < 1e-10);
  }
}

TEST_CASE("simulate_exchange: deterministic records over the horizon") {
  ExchangeSimulationConfig cfg;
  cfg.state_dim = 12;
  cfg.ranks = {5, 8, 2};
  cfg.horizon = 5;
  const auto a = simulate_exchange(cfg, 6, 10.0, 3);
  const auto b = simulate_exchange(cfg, 6, 10.0, 3);
  REQUIRE(a.size() == 5);
  for (std::size_t t = 0; t < a.size(); ++t) {
    CHECK(a[t].t == t + 1);
    CHECK(a[t].per_node_mse == b[t].per_node_mse);
    CHECK(a[t].balance.total_mse == doctest::Approx(std::accumulate(a[t].per_node_mse.begin(),
                                                                    a[t].per_node_mse.end(), 0.0)));
  }
}
