#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ssched/core.hpp"
#include "ssched/scheduler.hpp"

namespace ssched::harness {

/// Raised for anything wrong with a config file. `field` is the dotted path
/// of the offending key ("scheduler.epsilons[1]"), empty for file-level errors.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& msg)
      : Error(field.empty() ? msg : field + ": " + msg), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

enum class ExperimentKind { single_step_schedule, multi_step_kalman, curvature_study, theorem2_study, network_balance };

std::string to_string(ExperimentKind k);

struct PriorSpec {
  enum class Kind { identity, random_spd, explicit_matrix };
  Kind kind = Kind::identity;
  double scale = 1.0;  // identity: Sigma_x = scale I
  double min_eigenvalue = 0.2;
  double max_eigenvalue = 2.0;
  MatrixXd matrix;
};

struct MeasurementSpec {
  enum class Kind { gaussian, sphere, explicit_matrix };
  Kind kind = Kind::gaussian;
  double sigma_h = 1.0;
  MatrixXd matrix;
};

struct TransitionSpec {
  enum class Kind { scaled_identity, explicit_matrix };
  Kind kind = Kind::scaled_identity;
  double scale = 1.0;
  MatrixXd matrix;
};

struct ModelSpec {
  Eigen::Index state_dim = 0;  // m
  Eigen::Index sensors = 0;    // n
  double sigma = 1.0;
  PriorSpec prior;
  MeasurementSpec measurements;
  TransitionSpec transition;
  std::size_t horizon = 1;
};

struct SchedulerSpec {
  Eigen::Index k = 1;
  std::vector<Method> methods{Method::classic_greedy, Method::randomized_greedy};
  std::vector<double> epsilons{0.5};
  double brute_force_cap = kDefaultBruteForceCap;
};

struct CurvatureSpec {
  enum class Mode { automatic, exact, sampled };
  Mode mode = Mode::automatic;
  std::uint64_t samples = 20000;
  int cap = 10;
};

struct Theorem2Spec {
  std::optional<double> C;  // default m sigma_h^2
  std::optional<double> q;
  std::optional<double> target_probability;
  std::uint64_t meta_repetitions = 20;
  std::uint64_t curvature_repetitions = 20;  // meta-repetitions that also compute exact curvature
};

struct NetworkSpec {
  Eigen::Index state_dim = 50;
  std::vector<Eigen::Index> ranks{21, 37, 5};
  double transition_scale = 0.8;
  double process_noise = 0.2;
  double measurement_noise = 0.05;
  double initial_variance = 1.0;
  std::size_t horizon = 20;
  std::vector<Eigen::Index> budgets{40};
  std::vector<double> gammas{0.0, 200.0};
};

struct ExperimentConfig {
  std::string name = "experiment";
  ExperimentKind kind = ExperimentKind::single_step_schedule;
  std::uint64_t seed = 0;
  std::uint64_t trials = 1;
  std::uint64_t instances = 1;
  std::optional<std::string> output;
  ModelSpec model;
  SchedulerSpec scheduler;
  CurvatureSpec curvature;
  Theorem2Spec theorem2;
  NetworkSpec network;
  std::filesystem::path source_dir;  // for resolving relative paths
};

/// Parses and validates a YAML document. Unknown keys are errors.
ExperimentConfig parse_config(const std::string& yaml_text, const std::filesystem::path& source_dir = {});

ExperimentConfig load_config(const std::filesystem::path& path);

/// Re-checks cross-field constraints (also called by parse_config).
void validate(const ExperimentConfig& cfg);

}  // namespace ssched::harness
