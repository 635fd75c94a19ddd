#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "ncflow/dataset.hpp"
#include "ncflow/flow.hpp"
#include "ncflow/model.hpp"
#include "ncflow/types.hpp"

namespace ncflow {

/// A parsed flat key-value config: `[section]` headers, `key = value` lines,
/// `#` comments. Values are booleans, numbers, strings (bare or quoted),
/// `[a, b, c]` lists, or `lo:count` integer ranges (expanded to a list).
class KvConfig {
 public:
  struct Value {
    enum class Kind { Bool, Number, String, List } kind = Kind::String;
    bool b = false;
    double num = 0.0;
    std::string str;
    std::vector<Value> list;
  };

  static KvConfig parse_file(const std::string& path);
  static KvConfig parse_string(const std::string& text, const std::string& origin = "<string>");

  bool has(const std::string& section, const std::string& key) const;
  std::vector<std::string> keys(const std::string& section) const;
  bool has_section(const std::string& section) const;

  std::string get_string(const std::string& section, const std::string& key) const;
  std::string get_string(const std::string& section, const std::string& key,
                         const std::string& fallback) const;
  double get_number(const std::string& section, const std::string& key) const;
  double get_number(const std::string& section, const std::string& key, double fallback) const;
  bool get_bool(const std::string& section, const std::string& key, bool fallback) const;
  std::vector<double> get_number_list(const std::string& section, const std::string& key) const;
  std::vector<std::string> get_string_list(const std::string& section,
                                           const std::string& key) const;

  void set_number(const std::string& section, const std::string& key, double v);
  void set_string(const std::string& section, const std::string& key, const std::string& v);

 private:
  const Value* find(const std::string& section, const std::string& key) const;
  std::map<std::string, std::map<std::string, Value>> sections_;
  std::string origin_;
};

struct DatasetSpec {
  enum class Source { Generate, Idx, Csv };
  Source source = Source::Generate;
  GenerateConfig generate;
  std::string images_path, labels_path;
  std::vector<int> keep_classes;
  int max_per_class = 0;
  std::string csv_path;
  bool center = false;
  bool augment_bias = false;
};

struct InitSpec {
  enum class Kind { RandomBalanced, DataSeeded };
  Kind kind = Kind::RandomBalanced;
  int width = 0;
  double epsilon = 0.0;  // <= 0 selects the default 1e-4 / sqrt(h)
  std::uint64_t seed = 0;
  bool require_checks = true;
};

struct VerifySpec {
  bool enabled = true;
  double rank1_max = 0.05;
  double w_cos_min = 0.95;
  double v_cos_min = 0.95;
  double duality_max = 0.10;
  double scale_rel_max = 0.10;
  double orthogonality_max = 0.0;  // exact zero under the ReLU sign pattern
  double decomposition_gap_max = 1e-10;
  bool require_separation = true;
};

struct ExperimentConfig {
  DatasetSpec dataset;
  InitSpec init;
  LossKind loss = LossKind::CrossEntropy;
  FlowConfig flow;
  bool use_sgd = false;
  SgdConfig sgd;
  VerifySpec verify;
  std::string out_dir;
};

/// Loads and cross-validates an experiment config. Throws ConfigError with
/// the offending key on any inconsistency (unknown values, binary losses with
/// K != 2, cross-entropy with K < 3, missing files for load sources, ...).
ExperimentConfig load_experiment_config(const std::string& path);
ExperimentConfig experiment_config_from_kv(const KvConfig& kv);

}  // namespace ncflow
