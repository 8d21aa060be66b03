#include "ssched/harness/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "ssched/harness/config.hpp"
#include "ssched/harness/experiments.hpp"
#include "ssched/harness/metrics.hpp"

namespace ssched::harness {

namespace {

struct Subcommand {
  const char* name;
  const char* help;
  std::optional<ExperimentKind> kind;  // forced kind; nullopt keeps the config's
  bool verify;
};

const Subcommand kSubcommands[] = {
    {"run", "Run the experiment described by the config", std::nullopt, false},
    {"verify-theorem1", "Check the randomized greedy guarantee against exhaustive optima",
     ExperimentKind::single_step_schedule, true},
    {"speedup", "Compare classic and randomized greedy evaluation counts and wall time",
     ExperimentKind::single_step_schedule, true},
    {"curvature", "Element-wise curvature of the scheduling objective", ExperimentKind::curvature_study, false},
    {"theorem2", "Probabilistic curvature bound under random measurement rows", ExperimentKind::theorem2_study, true},
    {"network", "Balanced measurement exchange simulation", ExperimentKind::network_balance, false},
};

void write_outputs(const std::filesystem::path& dir, const ExperimentResult& res, const std::string& format) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream csv(dir / "metrics.csv", std::ios::binary);
    if (!csv) throw std::runtime_error("cannot write " + (dir / "metrics.csv").string());
    write_csv(csv, res.rows);
  }
  if (format == "json") {
    std::ofstream js(dir / "metrics.json", std::ios::binary);
    js << to_json(res.rows).dump(1) << '\n';
  }
  std::ofstream sum(dir / "summary.json", std::ios::binary);
  if (!sum) throw std::runtime_error("cannot write " + (dir / "summary.json").string());
  sum << res.summary.dump(2) << '\n';
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Sensor scheduling experiments for Kalman filtering", "ssched"};
  app.require_subcommand(1);
  app.fallthrough();

  std::optional<std::uint64_t> seed;
  std::string out_dir;
  unsigned threads = 1;
  std::string format = "csv";
  app.add_option("--seed", seed, "Override the config seed");
  app.add_option("--out-dir", out_dir, "Output directory (default: config 'output' or results/<name>)");
  app.add_option("--threads", threads, "Worker threads, 0 = all cores")->check(CLI::NonNegativeNumber);
  app.add_option("--format", format, "Metrics format; json also writes metrics.json")
      ->check(CLI::IsMember({"csv", "json"}));

  std::string config_path;
  const Subcommand* chosen = nullptr;
  for (const auto& sc : kSubcommands) {
    auto* sub = app.add_subcommand(sc.name, sc.help);
    sub->add_option("config", config_path, "YAML experiment config")->required();
    sub->callback([&chosen, &sc] { chosen = &sc; });
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }

  try {
    ExperimentConfig cfg = load_config(config_path);
    if (chosen->kind && cfg.kind != *chosen->kind) {
      cfg.kind = *chosen->kind;
      validate(cfg);
    }
    RunOptions opt;
    opt.seed = seed;
    opt.threads = threads;

    ExperimentResult res;
    const std::string name = chosen->name;
    if (name == "verify-theorem1") res = verify_theorem1(cfg, opt);
    else if (name == "speedup") res = speedup_report(cfg, opt);
    else res = run_experiment(cfg, opt);

    const bool fail = chosen->verify && res.violations > 0;
    res.summary["exit_code"] = fail ? kExitBoundViolation : kExitOk;
    const std::filesystem::path dir =
        !out_dir.empty() ? std::filesystem::path(out_dir)
                         : (cfg.output ? std::filesystem::path(*cfg.output) : std::filesystem::path("results") / cfg.name);
    write_outputs(dir, res, format);
    out << name << ": " << res.rows.size() << " rows written to " << dir.string() << "; violations: " << res.violations
        << '\n';
    if (fail) {
      err << "bound violation detected (" << res.violations << "); see " << (dir / "summary.json").string() << '\n';
      return kExitBoundViolation;
    }
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const Error& e) {
    err << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
}

}  // namespace ssched::harness
