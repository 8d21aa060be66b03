#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <map>
#include <numeric>
#include <set>

#include "oracles.hpp"
#include "ssched/curvature.hpp"
#include "ssched/scheduler.hpp"

using namespace ssched;
using oracle::rel_err;

namespace {

MatrixXd scalar(double v) {
  MatrixXd m(1, 1);
  m << v;
  return m;
}

struct Instance {
  MatrixXd P;
  MatrixXd A;
  double sigma;
};

Instance random_instance(Rng& rng, Eigen::Index n, Eigen::Index m) {
  return {oracle::random_spd(rng, m), oracle::random_matrix(rng, n, m), 0.3 + uniform_unit(rng)};
}

std::vector<Eigen::Index> random_subset(Rng& rng, Eigen::Index n, std::size_t size) {
  std::vector<Eigen::Index> all(static_cast<std::size_t>(n));
  std::iota(all.begin(), all.end(), Eigen::Index{0});
  return sample_without_replacement(rng, all, size);
}

}  // namespace

TEST_CASE("objective: empty set is exactly zero") {
  Rng rng = make_rng(1);
  const MatrixXd P = oracle::random_spd(rng, 5);
  CHECK(objective(make_fisher_state(P, 0.7)) == 0.0);
}

TEST_CASE("objective: scalar instance") {
  const MatrixXd P = scalar(2.0);
  const MatrixXd A = scalar(1.0);
  auto st = rank_one_update(make_fisher_state(P, 1.0), 0, A.row(0));
  CHECK(objective(st) == doctest::Approx(4.0 / 3.0).epsilon(1e-14));
}

TEST_CASE("objective: incremental state agrees with direct inversion") {
  Rng rng = make_rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const auto inst = random_instance(rng, 9, 5);
    const auto S = random_subset(rng, 9, 1 + uniform_index(rng, 0, 8));
    auto st = make_fisher_state(inst.P, inst.sigma);
    for (Eigen::Index j : S) st = rank_one_update(st, j, inst.A.row(j));
    CHECK(std::abs(objective(st) - oracle::objective(inst.P, inst.A, S, inst.sigma)) < 1e-8);
  }
}

TEST_CASE("marginal_gain: zero row and scalar example") {
  auto st = make_fisher_state(scalar(2.0), 1.0);
  CHECK(marginal_gain(st, VectorXd::Zero(1)) == 0.0);
  CHECK(marginal_gain(st, scalar(1.0).row(0)) == doctest::Approx(4.0 / 3.0).epsilon(1e-14));
  // Cross-check against the objective difference for the same scalar instance.
  const double diff = oracle::objective(scalar(2.0), scalar(1.0), {0}, 1.0) - 0.0;
  CHECK(rel_err(marginal_gain(st, scalar(1.0).row(0)), diff) < 1e-12);
}

TEST_CASE("marginal_gain: equals f(S u {j}) - f(S) by direct inversion") {
  Rng rng = make_rng(3);
  for (int trial = 0; trial < 1000; ++trial) {
    const Eigen::Index n = 6;
    const auto inst = random_instance(rng, n, 5);
    auto S = random_subset(rng, n, uniform_index(rng, 0, 4));
    std::vector<Eigen::Index> rest;
    for (Eigen::Index j = 0; j < n; ++j)
      if (std::find(S.begin(), S.end(), j) == S.end()) rest.push_back(j);
    const Eigen::Index j = rest[uniform_index(rng, 0, rest.size() - 1)];
    const auto st = direct_fisher_state(inst.P, inst.A, std::span<const Eigen::Index>(S), inst.sigma);
    auto Sj = S;
    Sj.push_back(j);
    const double diff = oracle::objective(inst.P, inst.A, Sj, inst.sigma) - oracle::objective(inst.P, inst.A, S, inst.sigma);
    CHECK(rel_err(marginal_gain(st, inst.A.row(j)), diff) < 1e-8);
  }
}

TEST_CASE("rank_one_update: zero row, scalar example, duplicate") {
  auto st = make_fisher_state(scalar(2.0), 1.0);
  auto zero = rank_one_update(st, 0, VectorXd::Zero(1));
  CHECK(zero.inverse_fisher(0, 0) == 2.0);
  CHECK(zero.selected == std::vector<Eigen::Index>{0});
  auto one = rank_one_update(st, 0, scalar(1.0).row(0));
  CHECK(one.inverse_fisher(0, 0) == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
  CHECK_THROWS_AS(rank_one_update(one, 0, scalar(1.0).row(0)), DuplicateSelection);
  // The input state is untouched.
  CHECK(st.selected.empty());
  CHECK(st.inverse_fisher(0, 0) == 2.0);
}

TEST_CASE("rank_one_update: chained updates equal direct inversion") {
  Rng rng = make_rng(4);
  for (int trial = 0; trial < 500; ++trial) {
    const Eigen::Index m = 1 + static_cast<Eigen::Index>(uniform_index(rng, 0, 9));
    const Eigen::Index k = 1 + static_cast<Eigen::Index>(uniform_index(rng, 0, 7));
    const auto inst = random_instance(rng, k, m);
    auto st = make_fisher_state(inst.P, inst.sigma);
    std::vector<Eigen::Index> S;
    for (Eigen::Index j = 0; j < k; ++j) {
      st = rank_one_update(st, j, inst.A.row(j));
      S.push_back(j);
    }
    CHECK(rel_err(st.inverse_fisher, oracle::filtered(inst.P, inst.A, inst.sigma)) < 1e-8);
    CHECK((st.inverse_fisher - st.inverse_fisher.transpose()).norm() == 0.0);
  }
}

TEST_CASE("sample_size") {
  CHECK(sample_size(100, 10, std::exp(-1.0)) == 10);
  CHECK(sample_size(10, 2, 0.9) == 1);
  for (Eigen::Index k = 1; k <= 12; ++k) {
    for (Eigen::Index n = k; n <= 40; n += 3) CHECK(sample_size(n, k, std::exp(-static_cast<double>(k))) == n);
  }
  CHECK(sample_size(50, 5, 0.999999) == 1);
  CHECK_THROWS_AS(sample_size(10, 2, 1.0), InvalidEpsilon);
  CHECK_THROWS_AS(sample_size(10, 2, 1.5), InvalidEpsilon);
  CHECK_THROWS_AS(sample_size(10, 2, 0.1), InvalidEpsilon);  // < e^{-2}
  CHECK_THROWS_AS(sample_size(3, 4, 0.5), InfeasibleBudget);
}

TEST_CASE("randomized_greedy: k = n selects everything") {
  Rng rng = make_rng(5);
  const auto inst = random_instance(rng, 6, 3);
  const auto sched = randomized_greedy(inst.P, inst.A, inst.sigma, 6, 0.5, 17);
  CHECK(sched.sorted_indices() == std::vector<Eigen::Index>{0, 1, 2, 3, 4, 5});
  CHECK(sched.objective == doctest::Approx(oracle::objective(inst.P, inst.A, {0, 1, 2, 3, 4, 5}, inst.sigma)));
}

TEST_CASE("randomized_greedy: epsilon = e^{-k} coincides with classic greedy") {
  Rng rng = make_rng(6);
  for (int trial = 0; trial < 30; ++trial) {
    const Eigen::Index n = 4 + static_cast<Eigen::Index>(uniform_index(rng, 0, 10));
    const Eigen::Index k = 1 + static_cast<Eigen::Index>(uniform_index(rng, 0, static_cast<std::uint64_t>(n - 1)));
    const auto inst = random_instance(rng, n, 4);
    const auto classic = classic_greedy(inst.P, inst.A, inst.sigma, k);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto r = randomized_greedy(inst.P, inst.A, inst.sigma, k, std::exp(-static_cast<double>(k)), seed);
      CHECK(r.indices == classic.indices);
      CHECK(r.objective == classic.objective);
      CHECK(r.gain_evals == classic.gain_evals);
    }
  }
}

TEST_CASE("randomized_greedy: evaluation ceiling and determinism") {
  Rng rng = make_rng(7);
  const auto inst = random_instance(rng, 30, 4);
  for (double eps : {0.05, 0.3, 0.9}) {
    const Eigen::Index s = sample_size(30, 5, eps);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto a = randomized_greedy(inst.P, inst.A, inst.sigma, 5, eps, seed);
      CHECK(a.gain_evals <= static_cast<std::uint64_t>(5 * s));
      CHECK(std::set<Eigen::Index>(a.indices.begin(), a.indices.end()).size() == 5);
      const auto b = randomized_greedy(inst.P, inst.A, inst.sigma, 5, eps, seed);
      CHECK(a.indices == b.indices);
    }
  }
  CHECK_THROWS_AS(randomized_greedy(inst.P, inst.A, inst.sigma, 31, 0.5, 0), InfeasibleBudget);
}

TEST_CASE("randomized_greedy: expected objective meets the curvature-dependent guarantee") {
  Rng rng = make_rng(8);
  const Eigen::Index n = 8, k = 3, m = 4;
  const double eps = 0.2;
  const auto inst = random_instance(rng, n, m);
  const auto opt = brute_force_optimal(inst.P, inst.A, inst.sigma, k);
  const auto curv = exact_curvature(inst.P, inst.A, inst.sigma);
  const double beta = sampling_beta(sample_size(n, k, eps), n);
  const auto alpha = guarantee_alpha(curv.c_effective(), eps, beta);
  double mean = 0.0;
  const int seeds = 2000;
  for (int s = 0; s < seeds; ++s) mean += randomized_greedy(inst.P, inst.A, inst.sigma, k, eps, s).objective;
  mean /= seeds;
  CHECK(mean >= alpha.alpha * opt.objective);
  CHECK(mean <= opt.objective + 1e-12);
}

TEST_CASE("classic_greedy: single pick is the exhaustive argmax") {
  Rng rng = make_rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const auto inst = random_instance(rng, 3, 2);
    const auto sched = classic_greedy(inst.P, inst.A, inst.sigma, 1);
    double best = -1;
    Eigen::Index arg = -1;
    for (Eigen::Index j = 0; j < 3; ++j) {
      const double f = oracle::objective(inst.P, inst.A, {j}, inst.sigma);
      if (f > best) best = f, arg = j;
    }
    CHECK(sched.indices.front() == arg);
    CHECK(sched.objective == doctest::Approx(best).epsilon(1e-10));
  }
}

TEST_CASE("classic_greedy: evaluation counts") {
  Rng rng = make_rng(10);
  const auto inst = random_instance(rng, 100, 3);
  CHECK(classic_greedy(inst.P, inst.A, inst.sigma, 10).gain_evals == 955);
}

TEST_CASE("classic vs randomized evaluation ratio tracks k / ln(1/eps)") {
  Rng rng = make_rng(11);
  const auto inst = random_instance(rng, 200, 5);
  const auto classic = classic_greedy(inst.P, inst.A, inst.sigma, 20);
  const auto rand = randomized_greedy(inst.P, inst.A, inst.sigma, 20, 0.1, 3);
  const double ratio = static_cast<double>(classic.gain_evals) / static_cast<double>(rand.gain_evals);
  const double predicted = 20.0 / std::log(10.0);
  CHECK(std::abs(ratio - predicted) / predicted < 0.25);
}

TEST_CASE("brute_force_optimal: trivial budgets and cap") {
  Rng rng = make_rng(12);
  const auto inst = random_instance(rng, 5, 2);
  CHECK(brute_force_optimal(inst.P, inst.A, inst.sigma, 5).sorted_indices() == std::vector<Eigen::Index>{0, 1, 2, 3, 4});
  const auto one = random_instance(rng, 1, 2);
  CHECK(brute_force_optimal(one.P, one.A, one.sigma, 1).indices == std::vector<Eigen::Index>{0});
  CHECK_THROWS_AS(brute_force_optimal(inst.P, inst.A, inst.sigma, 2, 5.0), InstanceTooLarge);
}

TEST_CASE("brute_force_optimal: ties resolve to the lexicographically smallest set") {
  // Identical rows make every 2-subset of {0,1,2} equivalent.
  MatrixXd A(3, 2);
  A << 1.0, 0.0, 1.0, 0.0, 1.0, 0.0;
  CHECK(brute_force_optimal(MatrixXd::Identity(2, 2), A, 1.0, 2).indices == std::vector<Eigen::Index>{0, 1});
}

TEST_CASE("ordering: optimum >= classic greedy >= mean of random schedules") {
  Rng rng = make_rng(13);
  for (int trial = 0; trial < 100; ++trial) {
    const auto inst = random_instance(rng, 8, 4);
    const auto opt = brute_force_optimal(inst.P, inst.A, inst.sigma, 3);
    const auto greedy = classic_greedy(inst.P, inst.A, inst.sigma, 3);
    CHECK(opt.objective >= greedy.objective - 1e-12);
    CHECK(opt.objective == doctest::Approx(oracle::objective(inst.P, inst.A, opt.indices, inst.sigma)).epsilon(1e-10));
    double mean_random = 0.0;
    for (std::uint64_t s = 0; s < 50; ++s) {
      const auto r = evaluate(random_schedule(8, 3, s + 1000 * trial), inst.P, inst.A, inst.sigma);
      CHECK(opt.objective >= r.objective - 1e-12);
      mean_random += r.objective / 50.0;
    }
    CHECK(greedy.objective >= mean_random);
  }
}

TEST_CASE("random_schedule: trivial budget, determinism, uniformity") {
  CHECK(random_schedule(4, 4, 1).sorted_indices() == std::vector<Eigen::Index>{0, 1, 2, 3});
  CHECK(random_schedule(20, 5, 77).indices == random_schedule(20, 5, 77).indices);
  CHECK_THROWS_AS(random_schedule(3, 4, 0), InfeasibleBudget);

  std::map<std::pair<Eigen::Index, Eigen::Index>, int> counts;
  const int N = 10000;
  for (int s = 0; s < N; ++s) {
    const auto idx = random_schedule(5, 2, static_cast<std::uint64_t>(s)).sorted_indices();
    ++counts[{idx[0], idx[1]}];
  }
  CHECK(counts.size() == 10);
  const double sd = std::sqrt(0.1 * 0.9 / N);
  for (const auto& [pair, c] : counts) CHECK(std::abs(static_cast<double>(c) / N - 0.1) <= 3 * sd);
}

TEST_CASE("guarantee_alpha") {
  CHECK(guarantee_alpha(1.0, 1e-15, 1.0).alpha == doctest::Approx(1.0 - std::exp(-1.0)).epsilon(1e-12));
  CHECK(guarantee_alpha(1.0, 0.5, 1.0).alpha == doctest::Approx(0.1321205588).epsilon(1e-9));
  CHECK(guarantee_alpha(2.0, 0.1, 1.0).alpha == doctest::Approx(0.3434693403).epsilon(1e-9));
  const auto vac = guarantee_alpha(1.0, 0.9, 1.0);
  CHECK(vac.vacuous);
  CHECK(vac.alpha == 0.0);
  CHECK(vac.raw < 0.0);
  // c below one is treated as one.
  CHECK(guarantee_alpha(0.5, 0.5, 1.0).alpha == guarantee_alpha(1.0, 0.5, 1.0).alpha);
  // epsilon^beta <= epsilon, so the MSE variant is the conservative one.
  CHECK(guarantee_alpha(1.5, 0.4, 1.3).alpha >= guarantee_alpha_mse(1.5, 0.4).alpha);
}

TEST_CASE("sampling_beta") {
  CHECK(sampling_beta(1, 2) == 1.0);
  CHECK(sampling_beta(50, 100) == doctest::Approx(1.24).epsilon(1e-14));
  CHECK(sampling_beta(10, 10) == 1.0);
  for (Eigen::Index n = 2; n < 40; ++n)
    for (Eigen::Index s = 1; s < n; ++s) {
      const double sd = static_cast<double>(s), nd = static_cast<double>(n);
      if (sd / (2 * nd) <= 1.0 / (2 * (nd - sd))) CHECK(sampling_beta(s, n) == 1.0);
      CHECK(sampling_beta(s, n) >= 1.0);
    }
}

TEST_CASE("mse_bound") {
  CHECK(mse_bound(1.0, 0.7, 3.0) == doctest::Approx(0.7));
  CHECK(mse_bound(0.0, 0.7, 3.0) == doctest::Approx(3.0));
  CHECK(mse_bound(0.5, 1.0, 3.0) == doctest::Approx(2.0));
}

TEST_CASE("property: f is monotone along random chains and zero at the empty set") {
  Rng rng = make_rng(14);
  for (int chain = 0; chain < 500; ++chain) {
    const Eigen::Index m = 1 + static_cast<Eigen::Index>(uniform_index(rng, 0, 7));
    const Eigen::Index n = 1 + static_cast<Eigen::Index>(uniform_index(rng, 0, 11));
    const auto inst = random_instance(rng, n, m);
    const auto order = random_subset(rng, n, static_cast<std::size_t>(n));
    auto st = make_fisher_state(inst.P, inst.sigma);
    CHECK(objective(st) == 0.0);
    double prev = 0.0;
    for (Eigen::Index j : order) {
      st = rank_one_update(st, j, inst.A.row(j));
      const double f = objective(st);
      CHECK(f >= prev - 1e-10);
      prev = f;
    }
  }
}
