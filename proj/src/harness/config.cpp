#include "ssched/harness/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

namespace ssched::harness {

std::string to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::single_step_schedule: return "single_step_schedule";
    case ExperimentKind::multi_step_kalman: return "multi_step_kalman";
    case ExperimentKind::curvature_study: return "curvature_study";
    case ExperimentKind::theorem2_study: return "theorem2_study";
    case ExperimentKind::network_balance: return "network_balance";
  }
  return "unknown";
}

namespace {

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

std::string indexed(const std::string& path, std::size_t i) { return path + "[" + std::to_string(i) + "]"; }

void require_map(const YAML::Node& node, const std::string& path) {
  if (!node.IsMap()) throw ConfigError(path, "expected a mapping");
}

void check_keys(const YAML::Node& node, const std::string& path, const std::set<std::string>& allowed) {
  require_map(node, path);
  for (const auto& kv : node) {
    const auto key = kv.first.as<std::string>();
    if (!allowed.count(key)) throw ConfigError(join(path, key), "unknown key");
  }
}

template <typename T>
T scalar_as(const YAML::Node& node, const std::string& path, const char* what) {
  if (!node.IsScalar()) throw ConfigError(path, std::string("expected ") + what);
  try {
    return node.as<T>();
  } catch (const YAML::Exception&) {
    throw ConfigError(path, std::string("expected ") + what + ", got '" + node.Scalar() + "'");
  }
}

double as_double(const YAML::Node& node, const std::string& path) {
  const double v = scalar_as<double>(node, path, "a number");
  if (!std::isfinite(v)) throw ConfigError(path, "must be finite");
  return v;
}

long long as_integer(const YAML::Node& node, const std::string& path, long long min_value) {
  const auto v = scalar_as<long long>(node, path, "an integer");
  if (v < min_value) throw ConfigError(path, "must be >= " + std::to_string(min_value));
  return v;
}

std::uint64_t as_seed(const YAML::Node& node, const std::string& path) {
  return scalar_as<std::uint64_t>(node, path, "a non-negative integer seed");
}

std::string as_string(const YAML::Node& node, const std::string& path) {
  return scalar_as<std::string>(node, path, "a string");
}

template <typename Fn>
void for_each_item(const YAML::Node& node, const std::string& path, Fn&& fn) {
  if (!node.IsSequence()) throw ConfigError(path, "expected a list");
  if (node.size() == 0) throw ConfigError(path, "list must not be empty");
  for (std::size_t i = 0; i < node.size(); ++i) fn(node[i], indexed(path, i));
}

MatrixXd matrix_from_rows(const std::vector<std::vector<double>>& rows, const std::string& path) {
  if (rows.empty()) throw ConfigError(path, "matrix has no rows");
  const std::size_t cols = rows.front().size();
  MatrixXd M(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != cols) throw ConfigError(indexed(path, r), "ragged matrix row");
    for (std::size_t c = 0; c < cols; ++c) M(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  }
  return M;
}

MatrixXd parse_matrix(const YAML::Node& node, const std::string& path) {
  std::vector<std::vector<double>> rows;
  for_each_item(node, path, [&](const YAML::Node& row, const std::string& rp) {
    std::vector<double> vals;
    for_each_item(row, rp, [&](const YAML::Node& v, const std::string& vp) { vals.push_back(as_double(v, vp)); });
    rows.push_back(std::move(vals));
  });
  return matrix_from_rows(rows, path);
}

/// Comma- or whitespace-separated numbers, one matrix row per line.
MatrixXd read_matrix_file(const std::filesystem::path& file, const std::string& path) {
  std::ifstream in(file);
  if (!in) throw ConfigError(path, "cannot open matrix file '" + file.string() + "'");
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    for (char& ch : line)
      if (ch == ',') ch = ' ';
    std::istringstream ls(line);
    std::vector<double> vals;
    std::string tok;
    while (ls >> tok) {
      try {
        std::size_t used = 0;
        vals.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw ConfigError(path, "bad number '" + tok + "' in '" + file.string() + "'");
      }
    }
    if (!vals.empty()) rows.push_back(std::move(vals));
  }
  return matrix_from_rows(rows, path);
}

MatrixXd matrix_source(const YAML::Node& node, const std::string& path, const std::filesystem::path& dir) {
  const bool inline_m = static_cast<bool>(node["matrix"]);
  const bool file_m = static_cast<bool>(node["matrix_file"]);
  if (inline_m == file_m) throw ConfigError(path, "explicit kind needs exactly one of 'matrix' or 'matrix_file'");
  if (inline_m) return parse_matrix(node["matrix"], join(path, "matrix"));
  std::filesystem::path file = as_string(node["matrix_file"], join(path, "matrix_file"));
  if (file.is_relative()) file = dir / file;
  return read_matrix_file(file, join(path, "matrix_file"));
}

PriorSpec parse_prior(const YAML::Node& node, const std::string& path, const std::filesystem::path& dir) {
  check_keys(node, path, {"kind", "scale", "min_eigenvalue", "max_eigenvalue", "matrix", "matrix_file"});
  PriorSpec p;
  const std::string kind = node["kind"] ? as_string(node["kind"], join(path, "kind")) : "identity";
  if (kind == "identity") {
    p.kind = PriorSpec::Kind::identity;
    if (node["scale"]) p.scale = as_double(node["scale"], join(path, "scale"));
    if (!(p.scale > 0.0)) throw ConfigError(join(path, "scale"), "must be positive");
  } else if (kind == "random_spd") {
    p.kind = PriorSpec::Kind::random_spd;
    if (node["min_eigenvalue"]) p.min_eigenvalue = as_double(node["min_eigenvalue"], join(path, "min_eigenvalue"));
    if (node["max_eigenvalue"]) p.max_eigenvalue = as_double(node["max_eigenvalue"], join(path, "max_eigenvalue"));
    if (!(p.min_eigenvalue > 0.0)) throw ConfigError(join(path, "min_eigenvalue"), "must be positive");
    if (p.max_eigenvalue < p.min_eigenvalue) throw ConfigError(join(path, "max_eigenvalue"), "must be >= min_eigenvalue");
  } else if (kind == "explicit") {
    p.kind = PriorSpec::Kind::explicit_matrix;
    p.matrix = matrix_source(node, path, dir);
  } else {
    throw ConfigError(join(path, "kind"), "expected identity, random_spd or explicit, got '" + kind + "'");
  }
  return p;
}

MeasurementSpec parse_measurements(const YAML::Node& node, const std::string& path, const std::filesystem::path& dir) {
  check_keys(node, path, {"kind", "sigma_h", "matrix", "matrix_file"});
  MeasurementSpec m;
  const std::string kind = node["kind"] ? as_string(node["kind"], join(path, "kind")) : "gaussian";
  if (kind == "gaussian" || kind == "sphere") {
    m.kind = kind == "gaussian" ? MeasurementSpec::Kind::gaussian : MeasurementSpec::Kind::sphere;
    if (node["sigma_h"]) m.sigma_h = as_double(node["sigma_h"], join(path, "sigma_h"));
    if (!(m.sigma_h > 0.0)) throw ConfigError(join(path, "sigma_h"), "must be positive");
  } else if (kind == "explicit") {
    m.kind = MeasurementSpec::Kind::explicit_matrix;
    m.matrix = matrix_source(node, path, dir);
  } else {
    throw ConfigError(join(path, "kind"), "expected gaussian, sphere or explicit, got '" + kind + "'");
  }
  return m;
}

TransitionSpec parse_transition(const YAML::Node& node, const std::string& path, const std::filesystem::path& dir) {
  check_keys(node, path, {"kind", "scale", "matrix", "matrix_file"});
  TransitionSpec t;
  const std::string kind = node["kind"] ? as_string(node["kind"], join(path, "kind")) : "scaled_identity";
  if (kind == "scaled_identity") {
    if (node["scale"]) t.scale = as_double(node["scale"], join(path, "scale"));
  } else if (kind == "explicit") {
    t.kind = TransitionSpec::Kind::explicit_matrix;
    t.matrix = matrix_source(node, path, dir);
  } else {
    throw ConfigError(join(path, "kind"), "expected scaled_identity or explicit, got '" + kind + "'");
  }
  return t;
}

ModelSpec parse_model(const YAML::Node& node, const std::filesystem::path& dir) {
  const std::string path = "model";
  check_keys(node, path, {"state_dim", "sensors", "sigma", "prior", "measurements", "transition", "horizon"});
  ModelSpec m;
  if (!node["state_dim"]) throw ConfigError("model.state_dim", "required");
  if (!node["sensors"]) throw ConfigError("model.sensors", "required");
  m.state_dim = static_cast<Eigen::Index>(as_integer(node["state_dim"], "model.state_dim", 1));
  m.sensors = static_cast<Eigen::Index>(as_integer(node["sensors"], "model.sensors", 1));
  if (node["sigma"]) m.sigma = as_double(node["sigma"], "model.sigma");
  if (!(m.sigma > 0.0)) throw ConfigError("model.sigma", "must be positive");
  if (node["prior"]) m.prior = parse_prior(node["prior"], "model.prior", dir);
  if (node["measurements"]) m.measurements = parse_measurements(node["measurements"], "model.measurements", dir);
  if (node["transition"]) m.transition = parse_transition(node["transition"], "model.transition", dir);
  if (node["horizon"]) m.horizon = static_cast<std::size_t>(as_integer(node["horizon"], "model.horizon", 1));
  return m;
}

SchedulerSpec parse_scheduler(const YAML::Node& node) {
  check_keys(node, "scheduler", {"k", "methods", "epsilons", "brute_force_cap"});
  SchedulerSpec s;
  if (node["k"]) s.k = static_cast<Eigen::Index>(as_integer(node["k"], "scheduler.k", 1));
  if (node["methods"]) {
    s.methods.clear();
    for_each_item(node["methods"], "scheduler.methods", [&](const YAML::Node& v, const std::string& p) {
      const auto name = as_string(v, p);
      const auto m = parse_method(name);
      if (!m) {
        throw ConfigError(p, "unknown method '" + name +
                                 "' (expected classic_greedy, randomized_greedy, random_uniform or brute_force_optimal)");
      }
      if (std::find(s.methods.begin(), s.methods.end(), *m) != s.methods.end()) throw ConfigError(p, "duplicate method");
      s.methods.push_back(*m);
    });
  }
  if (node["epsilons"]) {
    s.epsilons.clear();
    for_each_item(node["epsilons"], "scheduler.epsilons",
                  [&](const YAML::Node& v, const std::string& p) { s.epsilons.push_back(as_double(v, p)); });
  }
  if (node["brute_force_cap"]) s.brute_force_cap = as_double(node["brute_force_cap"], "scheduler.brute_force_cap");
  return s;
}

CurvatureSpec parse_curvature(const YAML::Node& node) {
  check_keys(node, "curvature", {"mode", "samples", "cap"});
  CurvatureSpec c;
  if (node["mode"]) {
    const auto mode = as_string(node["mode"], "curvature.mode");
    if (mode == "auto") c.mode = CurvatureSpec::Mode::automatic;
    else if (mode == "exact") c.mode = CurvatureSpec::Mode::exact;
    else if (mode == "sampled") c.mode = CurvatureSpec::Mode::sampled;
    else throw ConfigError("curvature.mode", "expected auto, exact or sampled, got '" + mode + "'");
  }
  if (node["samples"]) c.samples = static_cast<std::uint64_t>(as_integer(node["samples"], "curvature.samples", 1));
  if (node["cap"]) c.cap = static_cast<int>(as_integer(node["cap"], "curvature.cap", 1));
  if (c.cap > 24) throw ConfigError("curvature.cap", "exact enumeration supports at most 24 sensors");
  return c;
}

Theorem2Spec parse_theorem2(const YAML::Node& node) {
  check_keys(node, "theorem2", {"C", "q", "target_probability", "meta_repetitions", "curvature_repetitions"});
  Theorem2Spec t;
  if (node["C"]) t.C = as_double(node["C"], "theorem2.C");
  if (node["q"]) t.q = as_double(node["q"], "theorem2.q");
  if (node["target_probability"]) t.target_probability = as_double(node["target_probability"], "theorem2.target_probability");
  if (node["meta_repetitions"]) {
    t.meta_repetitions = static_cast<std::uint64_t>(as_integer(node["meta_repetitions"], "theorem2.meta_repetitions", 1));
  }
  t.curvature_repetitions = t.meta_repetitions;
  if (node["curvature_repetitions"]) {
    t.curvature_repetitions =
        static_cast<std::uint64_t>(as_integer(node["curvature_repetitions"], "theorem2.curvature_repetitions", 0));
  }
  return t;
}

NetworkSpec parse_network(const YAML::Node& node) {
  check_keys(node, "network", {"state_dim", "ranks", "transition_scale", "process_noise", "measurement_noise",
                               "initial_variance", "horizon", "budgets", "gammas"});
  NetworkSpec n;
  if (node["state_dim"]) n.state_dim = static_cast<Eigen::Index>(as_integer(node["state_dim"], "network.state_dim", 1));
  if (node["ranks"]) {
    n.ranks.clear();
    for_each_item(node["ranks"], "network.ranks", [&](const YAML::Node& v, const std::string& p) {
      n.ranks.push_back(static_cast<Eigen::Index>(as_integer(v, p, 1)));
    });
  }
  if (node["transition_scale"]) n.transition_scale = as_double(node["transition_scale"], "network.transition_scale");
  if (node["process_noise"]) n.process_noise = as_double(node["process_noise"], "network.process_noise");
  if (node["measurement_noise"]) n.measurement_noise = as_double(node["measurement_noise"], "network.measurement_noise");
  if (node["initial_variance"]) n.initial_variance = as_double(node["initial_variance"], "network.initial_variance");
  if (node["horizon"]) n.horizon = static_cast<std::size_t>(as_integer(node["horizon"], "network.horizon", 1));
  if (node["budgets"]) {
    n.budgets.clear();
    for_each_item(node["budgets"], "network.budgets", [&](const YAML::Node& v, const std::string& p) {
      n.budgets.push_back(static_cast<Eigen::Index>(as_integer(v, p, 1)));
    });
  }
  if (node["gammas"]) {
    n.gammas.clear();
    for_each_item(node["gammas"], "network.gammas",
                  [&](const YAML::Node& v, const std::string& p) { n.gammas.push_back(as_double(v, p)); });
  }
  return n;
}

ExperimentKind parse_kind(const std::string& s) {
  for (auto k : {ExperimentKind::single_step_schedule, ExperimentKind::multi_step_kalman, ExperimentKind::curvature_study,
                 ExperimentKind::theorem2_study, ExperimentKind::network_balance}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("experiment", "unknown experiment kind '" + s + "'");
}

void validate_matrix_shape(const MatrixXd& M, Eigen::Index rows, Eigen::Index cols, const std::string& path) {
  if (M.rows() != rows || M.cols() != cols) {
    throw ConfigError(path, "expected a " + std::to_string(rows) + " x " + std::to_string(cols) + " matrix, got " +
                                std::to_string(M.rows()) + " x " + std::to_string(M.cols()));
  }
}

}  // namespace

void validate(const ExperimentConfig& cfg) {
  if (cfg.trials < 1) throw ConfigError("trials", "must be >= 1");
  if (cfg.instances < 1) throw ConfigError("instances", "must be >= 1");

  const bool needs_model = cfg.kind != ExperimentKind::network_balance;
  const auto& m = cfg.model;
  if (needs_model && m.state_dim < 1) throw ConfigError("model", "required for experiment " + to_string(cfg.kind));
  if (m.state_dim >= 1) {
    if (m.prior.kind == PriorSpec::Kind::explicit_matrix) {
      validate_matrix_shape(m.prior.matrix, m.state_dim, m.state_dim, "model.prior.matrix");
      try {
        validate_spd(m.prior.matrix, "prior covariance");
      } catch (const InvalidCovariance& e) {
        throw ConfigError("model.prior.matrix", e.what());
      }
    }
    if (m.measurements.kind == MeasurementSpec::Kind::explicit_matrix) {
      validate_matrix_shape(m.measurements.matrix, m.sensors, m.state_dim, "model.measurements.matrix");
    }
    if (m.transition.kind == TransitionSpec::Kind::explicit_matrix) {
      validate_matrix_shape(m.transition.matrix, m.state_dim, m.state_dim, "model.transition.matrix");
    }
  }

  const auto& s = cfg.scheduler;
  if (m.sensors >= 1 && s.k > m.sensors) {
    throw ConfigError("scheduler.k", "budget k = " + std::to_string(s.k) + " exceeds the " +
                                         std::to_string(m.sensors) + " available sensors");
  }
  const double eps_min = std::exp(-static_cast<double>(s.k));
  for (std::size_t i = 0; i < s.epsilons.size(); ++i) {
    const double e = s.epsilons[i];
    if (!(e >= eps_min * (1.0 - 1e-12) && e < 1.0)) {
      std::ostringstream msg;
      msg << "epsilon must lie in [e^-k, 1) = [" << eps_min << ", 1), got " << e;
      throw ConfigError(indexed("scheduler.epsilons", i), msg.str());
    }
  }
  if (!(s.brute_force_cap >= 1.0)) throw ConfigError("scheduler.brute_force_cap", "must be >= 1");

  if (cfg.kind == ExperimentKind::theorem2_study) {
    if (m.measurements.kind != MeasurementSpec::Kind::sphere) {
      throw ConfigError("model.measurements.kind", "theorem2_study needs the sphere sampler");
    }
    const auto& t = cfg.theorem2;
    const double sh2 = m.measurements.sigma_h * m.measurements.sigma_h;
    const double C = t.C.value_or(static_cast<double>(m.state_dim) * sh2);
    if (C < static_cast<double>(m.state_dim) * sh2 * (1.0 - 1e-12)) {
      throw ConfigError("theorem2.C", "must be >= m sigma_h^2");
    }
    if (!(C > sh2)) throw ConfigError("theorem2.C", "must exceed sigma_h^2");
    if (t.q.has_value() == t.target_probability.has_value()) {
      throw ConfigError("theorem2", "give exactly one of 'q' or 'target_probability'");
    }
    if (t.q && !(*t.q > 0.0)) throw ConfigError("theorem2.q", "must be positive");
    if (t.target_probability && !(*t.target_probability > 0.0 && *t.target_probability < 1.0)) {
      throw ConfigError("theorem2.target_probability", "must lie in (0, 1)");
    }
    if (t.curvature_repetitions > t.meta_repetitions) {
      throw ConfigError("theorem2.curvature_repetitions", "must not exceed meta_repetitions");
    }
  }

  if (cfg.kind == ExperimentKind::network_balance) {
    const auto& n = cfg.network;
    for (std::size_t i = 0; i < n.ranks.size(); ++i) {
      if (n.ranks[i] > n.state_dim) throw ConfigError(indexed("network.ranks", i), "must not exceed state_dim");
    }
    if (n.ranks.size() < 2) throw ConfigError("network.ranks", "exchange needs at least two nodes");
    if (!(n.process_noise > 0.0)) throw ConfigError("network.process_noise", "must be positive");
    if (!(n.measurement_noise > 0.0)) throw ConfigError("network.measurement_noise", "must be positive");
    if (!(n.initial_variance > 0.0)) throw ConfigError("network.initial_variance", "must be positive");
    for (std::size_t i = 0; i < n.gammas.size(); ++i) {
      if (!(n.gammas[i] >= 0.0)) throw ConfigError(indexed("network.gammas", i), "must be >= 0");
    }
  }
}

ExperimentConfig parse_config(const std::string& yaml_text, const std::filesystem::path& source_dir) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::Exception& e) {
    throw ConfigError("", std::string("YAML parse error: ") + e.what());
  }
  check_keys(root, "", {"name", "experiment", "seed", "trials", "instances", "output", "model", "scheduler",
                        "curvature", "theorem2", "network"});
  ExperimentConfig cfg;
  cfg.source_dir = source_dir;
  if (!root["experiment"]) throw ConfigError("experiment", "required");
  cfg.kind = parse_kind(as_string(root["experiment"], "experiment"));
  cfg.name = root["name"] ? as_string(root["name"], "name") : to_string(cfg.kind);
  if (root["seed"]) cfg.seed = as_seed(root["seed"], "seed");
  if (root["trials"]) cfg.trials = static_cast<std::uint64_t>(as_integer(root["trials"], "trials", 1));
  if (root["instances"]) cfg.instances = static_cast<std::uint64_t>(as_integer(root["instances"], "instances", 1));
  if (root["output"]) cfg.output = as_string(root["output"], "output");
  if (root["model"]) cfg.model = parse_model(root["model"], source_dir);
  if (root["scheduler"]) cfg.scheduler = parse_scheduler(root["scheduler"]);
  if (root["curvature"]) cfg.curvature = parse_curvature(root["curvature"]);
  if (root["theorem2"]) cfg.theorem2 = parse_theorem2(root["theorem2"]);
  if (root["network"]) cfg.network = parse_network(root["network"]);
  validate(cfg);
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot open config file '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.parent_path());
}

}  // namespace ssched::harness
