#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <optional>
#include <thread>
#include <vector>

#include <json.hpp>

#include "ssched/harness/config.hpp"
#include "ssched/harness/metrics.hpp"

namespace ssched::harness {

struct RunOptions {
  std::optional<std::uint64_t> seed;  // overrides the config seed
  unsigned threads = 1;               // 0 = hardware concurrency
};

struct ExperimentResult {
  std::vector<MetricsRow> rows;
  nlohmann::ordered_json summary;
  std::uint64_t violations = 0;  // bound violations found by the checks this mode performs
};

/// Runs the experiment named by cfg.kind.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const RunOptions& opt);

ExperimentResult run_single_step(const ExperimentConfig& cfg, const RunOptions& opt);
ExperimentResult run_multi_step(const ExperimentConfig& cfg, const RunOptions& opt);
ExperimentResult run_curvature_study(const ExperimentConfig& cfg, const RunOptions& opt);
ExperimentResult run_theorem2_study(const ExperimentConfig& cfg, const RunOptions& opt);
ExperimentResult run_network_balance(const ExperimentConfig& cfg, const RunOptions& opt);

/// Mean-over-seeds check of the randomized greedy guarantee (and its MSE
/// form) against exhaustive optima and exact curvature, for every instance
/// and epsilon; classic greedy is checked deterministically.
ExperimentResult verify_theorem1(const ExperimentConfig& cfg, const RunOptions& opt);

/// Classic vs randomized greedy on identical instances: gain-evaluation and
/// wall-time ratios per epsilon. Always runs single-threaded for timing.
ExperimentResult speedup_report(const ExperimentConfig& cfg, const RunOptions& opt);

/// Spearman rank correlation with average ranks for ties. NaN when either
/// input is constant or shorter than 2.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

/// The model instance used for index `i`: prior, measurement matrix and transition.
struct Instance {
  MatrixXd P;
  MatrixXd A;
  MatrixXd H;
};
Instance make_instance(const ModelSpec& model, std::uint64_t seed, std::uint64_t index);

unsigned resolve_threads(unsigned requested);

/// Calls fn(i) for i in [0, count) on `threads` workers and returns the
/// results indexed by i, so output order never depends on scheduling. The
/// exception from the lowest failing index is rethrown.
template <typename Fn>
auto parallel_map(std::size_t count, unsigned threads, Fn&& fn) -> std::vector<decltype(fn(std::size_t{}))> {
  using R = decltype(fn(std::size_t{}));
  std::vector<std::optional<R>> slots(count);
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        slots[i].emplace(fn(i));
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const unsigned n = std::max(1u, std::min<unsigned>(resolve_threads(threads), static_cast<unsigned>(count)));
  if (n <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < n; ++w) pool.emplace_back(worker);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  std::vector<R> out;
  out.reserve(count);
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

}  // namespace ssched::harness
