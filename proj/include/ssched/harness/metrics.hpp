#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace ssched::harness {

/// One output record. Absent optionals are written as empty CSV cells and
/// JSON nulls.
struct MetricsRow {
  std::string experiment;
  std::string kind;
  std::uint64_t instance = 0;
  std::string method;
  std::optional<double> epsilon;
  std::optional<double> gamma;
  std::optional<std::int64_t> budget;  // k or K
  std::uint64_t seed = 0;
  std::uint64_t t = 1;
  std::optional<std::int64_t> node;
  std::optional<double> objective;      // f(S) or u(S)
  std::optional<double> mse;            // Tr(F_S^{-1}), or a node's / the network's MSE
  std::optional<double> objective_opt;  // f(O*)
  std::optional<double> mse_opt;
  std::optional<double> alpha_card;   // 1 - e^{-1/c} - eps^beta / c
  std::optional<double> alpha_card1;  // 1 - e^{-1/c} - eps / c
  std::optional<double> c_max;
  std::optional<double> beta;
  std::optional<double> bound_value;
  std::optional<bool> bound_satisfied;
  std::optional<double> pairwise_mse_distance;
  std::optional<double> event_frequency;
  std::optional<double> probability_bound;
  std::optional<std::uint64_t> violations;
  std::optional<std::uint64_t> gain_evals;
  std::int64_t wall_time_ns = 0;
};

/// Column names in output order. wall_time_ns is last.
const std::vector<std::string>& csv_columns();

/// Shortest decimal representation that parses back to the same double.
std::string format_double(double v);

void write_csv(std::ostream& out, const std::vector<MetricsRow>& rows);
nlohmann::ordered_json to_json(const MetricsRow& row);
nlohmann::ordered_json to_json(const std::vector<MetricsRow>& rows);

}  // namespace ssched::harness
