#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "ncflow/experiment.hpp"

namespace fs = std::filesystem;
using namespace ncflow;

namespace {

int log_level_from(const std::string& name) {
  if (name == "quiet") return 0;
  if (name == "info") return 1;
  if (name == "debug") return 2;
  throw CLI::ValidationError("--log-level must be quiet, info, or debug");
}

std::string default_out_dir(const std::string& config_path) {
  const char* root = std::getenv("NCFLOW_OUT_ROOT");
  if (root == nullptr || *root == '\0') return "";
  return (fs::path(root) / fs::path(config_path).stem()).string();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gradient-flow trainer and neural-collapse verification harness"};
  app.require_subcommand(1);
  app.fallthrough();  // global options may follow the subcommand

  std::string config_path, out_dir, run_dir, csv_path;
  std::string log_level = "info";
  bool dry_run = false;
  int jobs = 1;
  double verify_tol = 1e-9;
  app.add_option("--log-level", log_level, "quiet | info | debug")->capture_default_str();
  app.add_option("--jobs", jobs, "worker threads (kernels and sweep cells)")
      ->capture_default_str();

  auto* run = app.add_subcommand("run", "run the full experiment pipeline");
  run->add_option("--config", config_path, "experiment config file")->required();
  run->add_option("--out", out_dir, "output directory");
  run->add_flag("--dry-run", dry_run, "validate the config, print the plan, write nothing");

  auto* verify = app.add_subcommand("verify", "re-verify a finished run directory");
  verify->add_option("run_dir", run_dir, "run directory")->required();
  verify->add_option("--tol", verify_tol, "comparison tolerance")->capture_default_str();

  auto* sweep = app.add_subcommand("sweep", "run a parameter grid and aggregate results");
  sweep->add_option("--config", config_path, "config with a [sweep] section")->required();
  sweep->add_option("--out", out_dir, "output directory");

  auto* dataset = app.add_subcommand("dataset", "dataset utilities");
  auto* gen = dataset->add_subcommand("generate", "generate a dataset from a config");
  gen->add_option("--config", config_path, "config with a [dataset] section")->required();
  gen->add_option("--out", out_dir, "output directory")->required();
  auto* inspect = dataset->add_subcommand("inspect", "print the certificate of a CSV dataset");
  inspect->add_option("csv", csv_path, "dataset CSV path")->required();
  dataset->require_subcommand(1);

  CLI11_PARSE(app, argc, argv);
#ifdef _OPENMP
  if (jobs > 0) omp_set_num_threads(jobs);
#endif
  int level;
  try {
    level = log_level_from(log_level);
  } catch (const CLI::ValidationError& e) {
    std::cerr << e.what() << "\n";
    return kExitConfig;
  }

  try {
    if (run->parsed()) {
      ExperimentConfig cfg;
      try {
        cfg = load_experiment_config(config_path);
      } catch (const ConfigError& e) {
        std::cerr << "[config] " << e.what() << "\n";
        return kExitConfig;
      }
      RunOptions opt;
      opt.out_dir = !out_dir.empty() ? out_dir : default_out_dir(config_path);
      opt.dry_run = dry_run;
      opt.log_level = level;
      return run_experiment(cfg, opt).exit_code;
    }
    if (verify->parsed()) {
      return verify_run_dir(run_dir, verify_tol, level);
    }
    if (sweep->parsed()) {
      KvConfig kv;
      try {
        kv = KvConfig::parse_file(config_path);
      } catch (const ConfigError& e) {
        std::cerr << "[config] " << e.what() << "\n";
        return kExitConfig;
      }
      const std::string dir = !out_dir.empty() ? out_dir : default_out_dir(config_path);
      if (dir.empty()) {
        std::cerr << "[config] sweep needs --out or NCFLOW_OUT_ROOT\n";
        return kExitConfig;
      }
      return run_sweep(kv, dir, jobs, level);
    }
    if (gen->parsed()) {
      ExperimentConfig cfg;
      try {
        const KvConfig kv = KvConfig::parse_file(config_path);
        cfg.dataset.source = DatasetSpec::Source::Generate;
        cfg.dataset.generate.num_classes =
            static_cast<int>(kv.get_number("dataset", "classes"));
        cfg.dataset.generate.dim = static_cast<int>(kv.get_number("dataset", "dim"));
        cfg.dataset.generate.points_per_class =
            static_cast<int>(kv.get_number("dataset", "per_class"));
        cfg.dataset.generate.cone_half_angle =
            kv.get_number("dataset", "cone_half_angle", 0.0);
        cfg.dataset.generate.norm_lo = kv.get_number("dataset", "norm_lo", 1.0);
        cfg.dataset.generate.norm_hi = kv.get_number("dataset", "norm_hi", 1.0);
        cfg.dataset.generate.seed =
            static_cast<std::uint64_t>(kv.get_number("dataset", "seed", 0.0));
      } catch (const ConfigError& e) {
        std::cerr << "[config] " << e.what() << "\n";
        return kExitConfig;
      }
      const Dataset data = generate_separable(cfg.dataset.generate);
      const SeparabilityCertificate cert = validate_separability(data);
      fs::create_directories(out_dir);
      save_csv(data, (fs::path(out_dir) / "dataset.csv").string());
      nlohmann::json manifest;
      manifest["n"] = data.n();
      manifest["dim"] = data.dim();
      manifest["classes"] = data.num_classes;
      manifest["certificate"] = to_json(cert);
      std::ofstream mf(fs::path(out_dir) / "dataset_manifest.json");
      mf << manifest.dump(2) << "\n";
      if (level > 0) std::cout << manifest.dump(2) << "\n";
      return kExitOk;
    }
    if (inspect->parsed()) {
      const Dataset data = load_csv(csv_path);
      const SeparabilityCertificate cert = validate_separability(data);
      nlohmann::json j = to_json(cert);
      j["n"] = data.n();
      j["dim"] = data.dim();
      j["classes"] = data.num_classes;
      std::cout << j.dump(2) << "\n";
      return kExitOk;
    }
  } catch (const ConfigError& e) {
    std::cerr << "[config] " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "[data] " << e.what() << "\n";
    return kExitData;
  } catch (const FlowError& e) {
    std::cerr << "[flow] " << e.what() << "\n";
    return kExitFlow;
  } catch (const std::exception& e) {
    std::cerr << "[error] " << e.what() << "\n";
    return kExitFlow;
  }
  return kExitConfig;
}
