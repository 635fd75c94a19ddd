#pragma once

#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "ncflow/collapse.hpp"
#include "ncflow/config.hpp"
#include "ncflow/dataset.hpp"
#include "ncflow/flow.hpp"
#include "ncflow/init.hpp"
#include "ncflow/margins.hpp"
#include "ncflow/types.hpp"

namespace ncflow {

struct RunOptions {
  std::string out_dir;     // overrides config when non-empty
  bool dry_run = false;
  bool write_files = true; // sweep cells run fully in memory
  int log_level = 1;       // 0 quiet, 1 info, 2 debug
};

/// Everything a pipeline run produced, whether or not it was written out.
struct RunArtifacts {
  int exit_code = kExitOk;
  std::string failure_stage;  // empty on success: config | data | flow | verification
  std::string message;
  nlohmann::json manifest;
  std::optional<Dataset> data;
  std::optional<SeparabilityCertificate> certificate;
  std::optional<TrajectoryLog> log;
  std::optional<MarginCertificate> margin_certificate;
  std::optional<CollapseReport> collapse;
  std::optional<KktReport> kkt;
  std::optional<EnvelopeReport> envelope;
};

/// Runs the full pipeline: dataset -> certificate -> init checks -> flow ->
/// margin certificate -> collapse report -> verification, writing manifest,
/// dataset CSV, diagnostics CSV, and checkpoints under the output directory.
/// Exit code 0 iff every enabled verification passed.
RunArtifacts run_experiment(const ExperimentConfig& cfg, const RunOptions& opt);

/// Recomputes the margin certificate and collapse report from a run
/// directory's artifacts alone and compares them with the stored manifest
/// values at tolerance `tol`. Returns a process exit code.
int verify_run_dir(const std::string& run_dir, double tol = 1e-9, int log_level = 1);

/// Expands the [sweep] grid (epsilon, seed, cone_half_angle, step_mode) over
/// the base config, runs the cells (in parallel when jobs > 1), and writes
/// summary.csv plus aggregates.csv under out_dir. Partial failures are
/// recorded per cell; the sweep itself exits 0 unless its own inputs are bad.
int run_sweep(const KvConfig& base, const std::string& out_dir, int jobs,
              int log_level = 1);

/// Diagnostics table with one row per logged step; written with
/// shortest-round-trip formatting so reruns are byte-identical.
std::string diagnostics_csv(const TrajectoryLog& log, int num_classes);

// Manifest serializers.
nlohmann::json to_json(const SeparabilityCertificate& cert);
nlohmann::json to_json(const MarginCertificate& cert);
nlohmann::json to_json(const CollapseReport& rep);
nlohmann::json to_json(const KktReport& rep);
nlohmann::json to_json(const EnvelopeReport& rep);
nlohmann::json to_json(const NonDegenerateReport& rep);
nlohmann::json to_json(const SemiLocalReport& rep);

}  // namespace ncflow
