#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "ncflow/checkpoint.hpp"
#include "ncflow/config.hpp"
#include "ncflow/experiment.hpp"
#include "ncflow/rng.hpp"

using namespace ncflow;
namespace fs = std::filesystem;

namespace {

const char* kBundledConfig = NCFLOW_SOURCE_DIR "/configs/binary_antipodal.conf";

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "ncflow_exp" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f.good());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("kv config parsing: sections, comments, lists, ranges") {
  const KvConfig kv = KvConfig::parse_string(R"(
# top comment
[alpha]
num = 2.5
flag = true
name = hello
quoted = "a b"
list = [1, 2.5, 3]
range = 4:3
[beta]
empty_list = []
)");
  CHECK(kv.get_number("alpha", "num") == 2.5);
  CHECK(kv.get_bool("alpha", "flag", false));
  CHECK(kv.get_string("alpha", "name") == "hello");
  CHECK(kv.get_string("alpha", "quoted") == "a b");
  CHECK(kv.get_number_list("alpha", "list") == std::vector<double>{1.0, 2.5, 3.0});
  CHECK(kv.get_number_list("alpha", "range") == std::vector<double>{4.0, 5.0, 6.0});
  CHECK(kv.get_number_list("beta", "empty_list").empty());
  CHECK(kv.get_number("alpha", "missing", 7.0) == 7.0);
  CHECK_THROWS_AS(kv.get_number("alpha", "name"), ConfigError);
}

TEST_CASE("kv config rejects malformed input with line info") {
  CHECK_THROWS_WITH_AS(KvConfig::parse_string("[s]\nkey value\n", "cfg"),
                       doctest::Contains("cfg:2"), ConfigError);
  CHECK_THROWS_AS(KvConfig::parse_string("key = 1\n"), ConfigError);  // no section
  CHECK_THROWS_AS(KvConfig::parse_string("[s]\nlist = [1, 2\n"), ConfigError);
}

TEST_CASE("experiment config cross-validation") {
  auto base = []() {
    return KvConfig::parse_string(R"(
[dataset]
source = generate
classes = 2
dim = 3
per_class = 2
[init]
kind = random
width = 4
[flow]
loss = exponential
)");
  };
  CHECK_NOTHROW(experiment_config_from_kv(base()));

  SUBCASE("cross-entropy with binary data is a config error") {
    KvConfig kv = base();
    kv.set_string("flow", "loss", "cross_entropy");
    CHECK_THROWS_WITH_AS(experiment_config_from_kv(kv), doctest::Contains("K >= 3"),
                         ConfigError);
  }
  SUBCASE("binary loss with three classes is a config error") {
    KvConfig kv = base();
    kv.set_number("dataset", "classes", 3);
    CHECK_THROWS_AS(experiment_config_from_kv(kv), ConfigError);
  }
  SUBCASE("data-seeded init needs cross-entropy") {
    KvConfig kv = base();
    kv.set_string("init", "kind", "data_seeded");
    CHECK_THROWS_AS(experiment_config_from_kv(kv), ConfigError);
  }
  SUBCASE("width below K is rejected") {
    KvConfig kv = base();
    kv.set_number("init", "width", 1);
    CHECK_THROWS_AS(experiment_config_from_kv(kv), ConfigError);
  }
  SUBCASE("bad subgradient value") {
    KvConfig kv = base();
    kv.set_number("flow", "subgrad_at_zero", 1.5);
    CHECK_THROWS_AS(experiment_config_from_kv(kv), ConfigError);
  }
}

TEST_CASE("checkpoint round trip and corruption detection") {
  const auto dir = fresh_dir("ckpt");
  Rng rng(5);
  NetParams p;
  p.loss_kind = LossKind::CrossEntropy;
  p.W = Matrix(4, 6);
  p.V = Matrix(3, 6);
  for (int j = 0; j < 6; ++j) {
    p.W.col(j) = rng.normal_vector(4);
    p.V.col(j) = rng.normal_vector(3);
  }
  const auto path = (dir / "params.bin").string();
  save_params(p, path);
  const NetParams back = load_params(path);
  CHECK((back.W - p.W).norm() == 0.0);
  CHECK((back.V - p.V).norm() == 0.0);
  CHECK(back.loss_kind == p.loss_kind);

  // Flip one payload byte: the checksum must catch it.
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekg(0, std::ios::end);
    const auto size = f.tellg();
    f.seekp(static_cast<std::streamoff>(size) - 9);
    char b;
    f.seekg(static_cast<std::streamoff>(size) - 9);
    f.read(&b, 1);
    b ^= 0x40;
    f.seekp(static_cast<std::streamoff>(size) - 9);
    f.write(&b, 1);
  }
  CHECK_THROWS_WITH_AS(load_params(path), doctest::Contains("checksum"), DataError);
}

TEST_CASE("truncated checkpoint payload is rejected") {
  const auto dir = fresh_dir("ckpt_trunc");
  NetParams p;
  p.loss_kind = LossKind::Exponential;
  p.W = Matrix::Ones(3, 4);
  p.V = Matrix::Ones(1, 4);
  const auto path = (dir / "params.bin").string();
  save_params(p, path);
  const auto size = fs::file_size(path);
  fs::resize_file(path, size - 16);
  CHECK_THROWS_WITH_AS(load_params(path), doctest::Contains("truncated"), DataError);
}

TEST_CASE("shape checkpoints carry epsilon and seed") {
  const auto dir = fresh_dir("shape");
  const InitShape s = random_balanced(3, 1, 5, 2e-4, 77);
  const auto path = (dir / "shape.bin").string();
  save_shape(s, path, 77);
  std::uint64_t seed = 0;
  const InitShape back = load_shape(path, &seed);
  CHECK(seed == 77);
  CHECK(back.epsilon == s.epsilon);
  CHECK((back.w_shapes - s.w_shapes).norm() == 0.0);
}

TEST_CASE("bundled antipodal config runs to a verified limit") {
  const ExperimentConfig cfg = load_experiment_config(kBundledConfig);
  RunOptions opt;
  opt.out_dir = fresh_dir("antipodal_run").string();
  opt.log_level = 0;
  const RunArtifacts art = run_experiment(cfg, opt);
  CHECK(art.exit_code == kExitOk);
  CHECK(art.manifest["status"] == "ok");
  CHECK(art.manifest["verification"]["all_pass"].get<bool>());
  CHECK(fs::exists(fs::path(opt.out_dir) / "manifest.json"));
  CHECK(fs::exists(fs::path(opt.out_dir) / "dataset.csv"));
  CHECK(fs::exists(fs::path(opt.out_dir) / "diagnostics.csv"));
  CHECK(fs::exists(fs::path(opt.out_dir) / "checkpoint_final.bin"));

  SUBCASE("verify passes on the fresh run directory") {
    CHECK(verify_run_dir(opt.out_dir, 1e-9, 0) == kExitOk);
    // Recomputation is deterministic, so even a much tighter tolerance holds.
    CHECK(verify_run_dir(opt.out_dir, 1e-12, 0) == kExitOk);
  }
  SUBCASE("corrupting the checkpoint fails verification with a data error") {
    const auto ckpt = fs::path(opt.out_dir) / "checkpoint_final.bin";
    std::fstream f(ckpt, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(-3, std::ios::end);
    f.write("x", 1);
    f.close();
    CHECK(verify_run_dir(opt.out_dir, 1e-9, 0) == kExitData);
  }
  SUBCASE("a tampered manifest residual fails verification") {
    const auto mpath = fs::path(opt.out_dir) / "manifest.json";
    auto manifest = nlohmann::json::parse(slurp(mpath));
    manifest["collapse_report"]["duality_residual"] =
        manifest["collapse_report"]["duality_residual"].get<double>() + 0.5;
    std::ofstream(mpath) << manifest.dump(2);
    CHECK(verify_run_dir(opt.out_dir, 1e-9, 0) == kExitVerification);
  }
}

TEST_CASE("reruns are byte-identical") {
  const ExperimentConfig cfg = load_experiment_config(kBundledConfig);
  RunOptions a;
  a.out_dir = fresh_dir("det_a").string();
  a.log_level = 0;
  RunOptions b;
  b.out_dir = fresh_dir("det_b").string();
  b.log_level = 0;
  REQUIRE(run_experiment(cfg, a).exit_code == kExitOk);
  REQUIRE(run_experiment(cfg, b).exit_code == kExitOk);
  CHECK(slurp(fs::path(a.out_dir) / "diagnostics.csv") ==
        slurp(fs::path(b.out_dir) / "diagnostics.csv"));
  CHECK(slurp(fs::path(a.out_dir) / "dataset.csv") ==
        slurp(fs::path(b.out_dir) / "dataset.csv"));
  CHECK(slurp(fs::path(a.out_dir) / "checkpoint_final.bin") ==
        slurp(fs::path(b.out_dir) / "checkpoint_final.bin"));
}

TEST_CASE("dry run writes nothing") {
  const ExperimentConfig cfg = load_experiment_config(kBundledConfig);
  RunOptions opt;
  opt.out_dir = (fs::temp_directory_path() / "ncflow_exp" / "never_created").string();
  fs::remove_all(opt.out_dir);
  opt.dry_run = true;
  opt.log_level = 0;
  const RunArtifacts art = run_experiment(cfg, opt);
  CHECK(art.exit_code == kExitOk);
  CHECK(art.manifest["status"] == "dry_run");
  CHECK(!fs::exists(opt.out_dir));
}

TEST_CASE("failed init checks map to the data exit code") {
  // Width 2 with a seed whose signs are one-sided fails non-degeneracy.
  KvConfig kv = KvConfig::parse_file(kBundledConfig);
  kv.set_number("init", "width", 2);
  int failing_seed = -1;
  for (int seed = 0; seed < 64 && failing_seed < 0; ++seed) {
    const InitShape s = random_balanced(2, 1, 2, 1e-4, seed);
    const bool plus = s.v_shapes(0, 0) > 0.0;
    if ((s.v_shapes(0, 1) > 0.0) == plus) failing_seed = seed;
  }
  REQUIRE(failing_seed >= 0);
  kv.set_number("init", "seed", failing_seed);
  const ExperimentConfig cfg = experiment_config_from_kv(kv);
  RunOptions opt;
  opt.write_files = false;
  opt.log_level = 0;
  const RunArtifacts art = run_experiment(cfg, opt);
  CHECK(art.exit_code == kExitData);
  CHECK(art.failure_stage == "data");
}

TEST_CASE("small-norm margin grows (relatively) as epsilon shrinks") {
  KvConfig kv = KvConfig::parse_string(R"(
[dataset]
source = generate
classes = 3
dim = 5
per_class = 4
cone_half_angle = 0.1
norm_lo = 0.9
norm_hi = 1.1
seed = 6
[init]
kind = data_seeded
width = 4
seed = 2
[flow]
loss = cross_entropy
mode = loss_adaptive
eta_base = 5e-3
eta_cap = 1.0
max_steps = 60000
log_every = 1
stop_loss = 1e-3
)");
  double prev_rel = -1.0;
  for (double epsilon : {1e-3, 1e-4, 1e-5}) {
    kv.set_number("init", "epsilon", epsilon);
    const ExperimentConfig cfg = experiment_config_from_kv(kv);
    RunOptions opt;
    opt.write_files = false;
    opt.log_level = 0;
    const RunArtifacts art = run_experiment(cfg, opt);
    REQUIRE(art.envelope.has_value());
    CHECK(art.envelope->covered);
    CHECK(art.envelope->holds);
    const double rel = art.envelope->w_margin / art.envelope->w_bound;
    CHECK(rel > prev_rel);
    prev_rel = rel;
  }
}

TEST_CASE("sweep: empty grid writes a header-only summary and exits 0") {
  const KvConfig kv = KvConfig::parse_file(kBundledConfig);
  const auto dir = fresh_dir("sweep_empty");
  CHECK(run_sweep(kv, dir.string(), 1, 0) == kExitOk);
  const std::string summary = slurp(dir / "summary.csv");
  CHECK(summary.find("epsilon,seed") == 0);
  CHECK(std::count(summary.begin(), summary.end(), '\n') == 1);  // header only
}

TEST_CASE("sweep: seed grid reports pass rates per cell") {
  // The bundled config text plus a sweep section over init seeds.
  const KvConfig merged =
      KvConfig::parse_string(slurp(kBundledConfig) + "\n[sweep]\nseed = 0:6\n");
  const auto dir = fresh_dir("sweep_seeds");
  CHECK(run_sweep(merged, dir.string(), 2, 0) == kExitOk);
  const std::string summary = slurp(dir / "summary.csv");
  CHECK(std::count(summary.begin(), summary.end(), '\n') == 7);  // header + 6 cells
  const std::string agg = slurp(dir / "aggregates.csv");
  CHECK(agg.find("run_pass,6,") != std::string::npos);
  CHECK(agg.find("init_check_pass,6,") != std::string::npos);
}
