#include "ssched/harness/metrics.hpp"

#include <charconv>
#include <cmath>
#include <ostream>

namespace ssched::harness {

const std::vector<std::string>& csv_columns() {
  static const std::vector<std::string> cols{
      "experiment",   "kind",        "instance",        "method",      "epsilon",
      "gamma",        "budget",      "seed",            "t",           "node",
      "objective",    "mse",         "objective_opt",   "mse_opt",     "alpha_card",
      "alpha_card1",  "c_max",       "beta",            "bound_value", "bound_satisfied",
      "pairwise_mse_distance",       "event_frequency", "probability_bound",
      "violations",   "gain_evals",  "wall_time_ns"};
  return cols;
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace {

template <typename T>
std::string cell(const std::optional<T>& v) {
  if (!v) return {};
  if constexpr (std::is_same_v<T, double>) return format_double(*v);
  else if constexpr (std::is_same_v<T, bool>) return *v ? "1" : "0";
  else return std::to_string(*v);
}

// Quotes a text field when it contains a separator, quote or newline.
std::string text(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

template <typename T>
nlohmann::ordered_json jval(const std::optional<T>& v) {
  if (!v) return nullptr;
  if constexpr (std::is_same_v<T, double>) {
    if (!std::isfinite(*v)) return format_double(*v);
  }
  return *v;
}

}  // namespace

void write_csv(std::ostream& out, const std::vector<MetricsRow>& rows) {
  const auto& cols = csv_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << '\n';
  for (const auto& r : rows) {
    const std::string fields[] = {text(r.experiment),
                                  text(r.kind),
                                  std::to_string(r.instance),
                                  text(r.method),
                                  cell(r.epsilon),
                                  cell(r.gamma),
                                  cell(r.budget),
                                  std::to_string(r.seed),
                                  std::to_string(r.t),
                                  cell(r.node),
                                  cell(r.objective),
                                  cell(r.mse),
                                  cell(r.objective_opt),
                                  cell(r.mse_opt),
                                  cell(r.alpha_card),
                                  cell(r.alpha_card1),
                                  cell(r.c_max),
                                  cell(r.beta),
                                  cell(r.bound_value),
                                  cell(r.bound_satisfied),
                                  cell(r.pairwise_mse_distance),
                                  cell(r.event_frequency),
                                  cell(r.probability_bound),
                                  cell(r.violations),
                                  cell(r.gain_evals),
                                  std::to_string(r.wall_time_ns)};
    static_assert(std::size(fields) == 26);
    for (std::size_t i = 0; i < std::size(fields); ++i) out << (i ? "," : "") << fields[i];
    out << '\n';
  }
}

nlohmann::ordered_json to_json(const MetricsRow& r) {
  nlohmann::ordered_json j;
  j["experiment"] = r.experiment;
  j["kind"] = r.kind;
  j["instance"] = r.instance;
  j["method"] = r.method;
  j["epsilon"] = jval(r.epsilon);
  j["gamma"] = jval(r.gamma);
  j["budget"] = jval(r.budget);
  j["seed"] = r.seed;
  j["t"] = r.t;
  j["node"] = jval(r.node);
  j["objective"] = jval(r.objective);
  j["mse"] = jval(r.mse);
  j["objective_opt"] = jval(r.objective_opt);
  j["mse_opt"] = jval(r.mse_opt);
  j["alpha_card"] = jval(r.alpha_card);
  j["alpha_card1"] = jval(r.alpha_card1);
  j["c_max"] = jval(r.c_max);
  j["beta"] = jval(r.beta);
  j["bound_value"] = jval(r.bound_value);
  j["bound_satisfied"] = jval(r.bound_satisfied);
  j["pairwise_mse_distance"] = jval(r.pairwise_mse_distance);
  j["event_frequency"] = jval(r.event_frequency);
  j["probability_bound"] = jval(r.probability_bound);
  j["violations"] = jval(r.violations);
  j["gain_evals"] = jval(r.gain_evals);
  j["wall_time_ns"] = r.wall_time_ns;
  return j;
}

nlohmann::ordered_json to_json(const std::vector<MetricsRow>& rows) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& r : rows) arr.push_back(to_json(r));
  return arr;
}

}  // namespace ssched::harness
