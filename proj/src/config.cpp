#include "ncflow/config.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace ncflow {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

bool parse_number(const std::string& s, double& out) {
  const char* last = s.data() + s.size();
  auto res = std::from_chars(s.data(), last, out);
  return res.ec == std::errc() && res.ptr == last;
}

KvConfig::Value parse_scalar(const std::string& raw, const std::string& where) {
  KvConfig::Value v;
  if (raw.size() >= 2 && raw.front() == '"' && raw.back() == '"') {
    v.kind = KvConfig::Value::Kind::String;
    v.str = raw.substr(1, raw.size() - 2);
    return v;
  }
  if (raw == "true" || raw == "false") {
    v.kind = KvConfig::Value::Kind::Bool;
    v.b = raw == "true";
    return v;
  }
  double num;
  if (parse_number(raw, num)) {
    v.kind = KvConfig::Value::Kind::Number;
    v.num = num;
    return v;
  }
  // lo:count integer range
  const auto colon = raw.find(':');
  if (colon != std::string::npos) {
    double lo, count;
    if (parse_number(raw.substr(0, colon), lo) &&
        parse_number(raw.substr(colon + 1), count) && count >= 0 &&
        std::floor(lo) == lo && std::floor(count) == count) {
      v.kind = KvConfig::Value::Kind::List;
      for (long i = 0; i < static_cast<long>(count); ++i) {
        KvConfig::Value e;
        e.kind = KvConfig::Value::Kind::Number;
        e.num = lo + static_cast<double>(i);
        v.list.push_back(e);
      }
      return v;
    }
  }
  if (raw.empty()) throw ConfigError(where + ": empty value");
  v.kind = KvConfig::Value::Kind::String;
  v.str = raw;
  return v;
}

KvConfig::Value parse_value(const std::string& raw, const std::string& where) {
  if (!raw.empty() && raw.front() == '[') {
    if (raw.back() != ']') throw ConfigError(where + ": unterminated list");
    KvConfig::Value v;
    v.kind = KvConfig::Value::Kind::List;
    const std::string inner = raw.substr(1, raw.size() - 2);
    std::size_t pos = 0;
    while (pos < inner.size()) {
      std::size_t next = inner.find(',', pos);
      if (next == std::string::npos) next = inner.size();
      const std::string item = trim(inner.substr(pos, next - pos));
      if (!item.empty()) v.list.push_back(parse_scalar(item, where));
      pos = next + 1;
    }
    return v;
  }
  return parse_scalar(raw, where);
}

}  // namespace

KvConfig KvConfig::parse_string(const std::string& text, const std::string& origin) {
  KvConfig cfg;
  cfg.origin_ = origin;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(lineno);
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": bad section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) throw ConfigError(where + ": empty section name");
      cfg.sections_[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string raw = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(where + ": empty key");
    if (section.empty()) throw ConfigError(where + ": key outside any [section]");
    cfg.sections_[section][key] = parse_value(raw, where);
  }
  return cfg;
}

KvConfig KvConfig::parse_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config " + path);
  std::stringstream buf;
  buf << f.rdbuf();
  return parse_string(buf.str(), path);
}

const KvConfig::Value* KvConfig::find(const std::string& section,
                                      const std::string& key) const {
  auto s = sections_.find(section);
  if (s == sections_.end()) return nullptr;
  auto k = s->second.find(key);
  return k == s->second.end() ? nullptr : &k->second;
}

bool KvConfig::has(const std::string& section, const std::string& key) const {
  return find(section, key) != nullptr;
}

bool KvConfig::has_section(const std::string& section) const {
  return sections_.count(section) > 0;
}

std::vector<std::string> KvConfig::keys(const std::string& section) const {
  std::vector<std::string> out;
  auto s = sections_.find(section);
  if (s != sections_.end()) {
    for (const auto& [k, v] : s->second) out.push_back(k);
  }
  return out;
}

std::string KvConfig::get_string(const std::string& section, const std::string& key) const {
  const Value* v = find(section, key);
  if (v == nullptr) throw ConfigError("missing key " + section + "." + key);
  if (v->kind == Value::Kind::String) return v->str;
  if (v->kind == Value::Kind::Bool) return v->b ? "true" : "false";
  if (v->kind == Value::Kind::Number) {
    std::ostringstream s;
    s << v->num;
    return s.str();
  }
  throw ConfigError(section + "." + key + " is a list, expected a scalar");
}

std::string KvConfig::get_string(const std::string& section, const std::string& key,
                                 const std::string& fallback) const {
  return has(section, key) ? get_string(section, key) : fallback;
}

double KvConfig::get_number(const std::string& section, const std::string& key) const {
  const Value* v = find(section, key);
  if (v == nullptr) throw ConfigError("missing key " + section + "." + key);
  if (v->kind != Value::Kind::Number)
    throw ConfigError(section + "." + key + " must be a number");
  return v->num;
}

double KvConfig::get_number(const std::string& section, const std::string& key,
                            double fallback) const {
  return has(section, key) ? get_number(section, key) : fallback;
}

bool KvConfig::get_bool(const std::string& section, const std::string& key,
                        bool fallback) const {
  const Value* v = find(section, key);
  if (v == nullptr) return fallback;
  if (v->kind != Value::Kind::Bool)
    throw ConfigError(section + "." + key + " must be true or false");
  return v->b;
}

std::vector<double> KvConfig::get_number_list(const std::string& section,
                                              const std::string& key) const {
  const Value* v = find(section, key);
  if (v == nullptr) throw ConfigError("missing key " + section + "." + key);
  std::vector<double> out;
  if (v->kind == Value::Kind::Number) {
    out.push_back(v->num);
    return out;
  }
  if (v->kind != Value::Kind::List)
    throw ConfigError(section + "." + key + " must be a number list");
  for (const Value& e : v->list) {
    if (e.kind != Value::Kind::Number)
      throw ConfigError(section + "." + key + " has a non-numeric element");
    out.push_back(e.num);
  }
  return out;
}

std::vector<std::string> KvConfig::get_string_list(const std::string& section,
                                                   const std::string& key) const {
  const Value* v = find(section, key);
  if (v == nullptr) throw ConfigError("missing key " + section + "." + key);
  std::vector<std::string> out;
  if (v->kind == Value::Kind::String) {
    out.push_back(v->str);
    return out;
  }
  if (v->kind != Value::Kind::List)
    throw ConfigError(section + "." + key + " must be a string list");
  for (const Value& e : v->list) {
    if (e.kind == Value::Kind::String) {
      out.push_back(e.str);
    } else if (e.kind == Value::Kind::Number) {
      std::ostringstream s;
      s << e.num;
      out.push_back(s.str());
    } else {
      throw ConfigError(section + "." + key + " has a non-string element");
    }
  }
  return out;
}

void KvConfig::set_number(const std::string& section, const std::string& key, double v) {
  Value val;
  val.kind = Value::Kind::Number;
  val.num = v;
  sections_[section][key] = val;
}

void KvConfig::set_string(const std::string& section, const std::string& key,
                          const std::string& v) {
  Value val;
  val.kind = Value::Kind::String;
  val.str = v;
  sections_[section][key] = val;
}

namespace {

std::vector<int> to_int_list(const std::vector<double>& nums, const std::string& what) {
  std::vector<int> out;
  for (double d : nums) {
    if (std::floor(d) != d) throw ConfigError(what + " must be integers");
    out.push_back(static_cast<int>(d));
  }
  return out;
}

}  // namespace

ExperimentConfig experiment_config_from_kv(const KvConfig& kv) {
  ExperimentConfig cfg;

  // [dataset]
  const std::string source = kv.get_string("dataset", "source", "generate");
  if (source == "generate") {
    cfg.dataset.source = DatasetSpec::Source::Generate;
    cfg.dataset.generate.num_classes = static_cast<int>(kv.get_number("dataset", "classes"));
    cfg.dataset.generate.dim = static_cast<int>(kv.get_number("dataset", "dim"));
    cfg.dataset.generate.points_per_class =
        static_cast<int>(kv.get_number("dataset", "per_class"));
    cfg.dataset.generate.cone_half_angle = kv.get_number("dataset", "cone_half_angle", 0.0);
    cfg.dataset.generate.norm_lo = kv.get_number("dataset", "norm_lo", 1.0);
    cfg.dataset.generate.norm_hi = kv.get_number("dataset", "norm_hi", 1.0);
    cfg.dataset.generate.seed =
        static_cast<std::uint64_t>(kv.get_number("dataset", "seed", 0.0));
  } else if (source == "idx") {
    cfg.dataset.source = DatasetSpec::Source::Idx;
    cfg.dataset.images_path = kv.get_string("dataset", "images");
    cfg.dataset.labels_path = kv.get_string("dataset", "labels");
    cfg.dataset.keep_classes = to_int_list(kv.get_number_list("dataset", "keep"),
                                           "dataset.keep");
    cfg.dataset.max_per_class =
        static_cast<int>(kv.get_number("dataset", "max_per_class", 0.0));
  } else if (source == "csv") {
    cfg.dataset.source = DatasetSpec::Source::Csv;
    cfg.dataset.csv_path = kv.get_string("dataset", "path");
  } else {
    throw ConfigError("dataset.source must be generate, idx, or csv");
  }
  cfg.dataset.center = kv.get_bool("dataset", "center", false);
  cfg.dataset.augment_bias = kv.get_bool("dataset", "augment_bias", false);

  // [init]
  const std::string kind = kv.get_string("init", "kind", "random");
  if (kind == "random" || kind == "random_balanced") {
    cfg.init.kind = InitSpec::Kind::RandomBalanced;
  } else if (kind == "data_seeded") {
    cfg.init.kind = InitSpec::Kind::DataSeeded;
  } else {
    throw ConfigError("init.kind must be random or data_seeded");
  }
  cfg.init.width = static_cast<int>(kv.get_number("init", "width"));
  cfg.init.epsilon = kv.get_number("init", "epsilon", 0.0);
  cfg.init.seed = static_cast<std::uint64_t>(kv.get_number("init", "seed", 0.0));
  cfg.init.require_checks = kv.get_bool("init", "require_checks", true);
  if (cfg.init.width < 1) throw ConfigError("init.width must be >= 1");

  // [flow]
  cfg.loss = loss_kind_from_name(kv.get_string("flow", "loss"));
  const std::string mode = kv.get_string("flow", "mode", "loss_adaptive");
  if (mode == "fixed") {
    cfg.flow.step_mode = StepModeKind::Fixed;
    cfg.flow.eta = kv.get_number("flow", "eta");
  } else if (mode == "loss_adaptive") {
    cfg.flow.step_mode = StepModeKind::LossAdaptive;
    cfg.flow.eta_base = kv.get_number("flow", "eta_base", 1e-2);
    cfg.flow.eta_cap = kv.get_number("flow", "eta_cap", 1e6);
  } else if (mode == "sgd") {
    cfg.use_sgd = true;
    cfg.sgd.batch = static_cast<int>(kv.get_number("flow", "batch", 1000));
    cfg.sgd.epochs = static_cast<int>(kv.get_number("flow", "epochs", 50));
    cfg.sgd.lr = kv.get_number("flow", "lr", 0.1);
    cfg.sgd.seed = static_cast<std::uint64_t>(kv.get_number("flow", "seed", 0.0));
  } else {
    throw ConfigError("flow.mode must be fixed, loss_adaptive, or sgd");
  }
  cfg.flow.max_steps = static_cast<long>(kv.get_number("flow", "max_steps", 200000));
  cfg.flow.log_every = static_cast<int>(kv.get_number("flow", "log_every", 10));
  cfg.flow.geometric_log_factor = kv.get_number("flow", "geometric_log_factor", 1.25);
  cfg.flow.stop_loss = kv.get_number("flow", "stop_loss", 0.0);
  cfg.flow.stationarity_tol = kv.get_number("flow", "stationarity_tol", 0.0);
  cfg.flow.stationarity_window = kv.get_number("flow", "stationarity_window", 0.0);
  cfg.flow.max_wall_seconds = kv.get_number("flow", "max_wall_seconds", 0.0);
  cfg.flow.subgrad_at_zero = kv.get_number("flow", "subgrad_at_zero", 0.0);
  if (cfg.flow.subgrad_at_zero < 0.0 || cfg.flow.subgrad_at_zero > 1.0)
    throw ConfigError("flow.subgrad_at_zero must lie in [0, 1]");

  // [verify]
  cfg.verify.enabled = kv.get_bool("verify", "enabled", true);
  cfg.verify.rank1_max = kv.get_number("verify", "rank1_max", 0.05);
  cfg.verify.w_cos_min = kv.get_number("verify", "w_cos_min", 0.95);
  cfg.verify.v_cos_min = kv.get_number("verify", "v_cos_min", 0.95);
  cfg.verify.duality_max = kv.get_number("verify", "duality_max", 0.10);
  cfg.verify.scale_rel_max = kv.get_number("verify", "scale_rel_max", 0.10);
  cfg.verify.orthogonality_max = kv.get_number("verify", "orthogonality_max", 0.0);
  cfg.verify.decomposition_gap_max =
      kv.get_number("verify", "decomposition_gap_max", 1e-10);
  cfg.verify.require_separation = kv.get_bool("verify", "require_separation", true);

  cfg.out_dir = kv.get_string("output", "dir", "");

  // Cross-consistency: the loss fixes the label convention.
  int classes = -1;
  if (cfg.dataset.source == DatasetSpec::Source::Generate)
    classes = cfg.dataset.generate.num_classes;
  else if (cfg.dataset.source == DatasetSpec::Source::Idx)
    classes = static_cast<int>(cfg.dataset.keep_classes.size());
  if (classes >= 0) {
    if (cfg.loss == LossKind::CrossEntropy && classes < 3)
      throw ConfigError("cross_entropy needs K >= 3 classes (binary data uses the "
                        "exponential or logistic loss)");
    if (cfg.loss != LossKind::CrossEntropy && classes != 2)
      throw ConfigError("binary losses need exactly 2 classes");
    if (cfg.init.width < classes) throw ConfigError("init.width must be >= K");
  }
  if (cfg.init.kind == InitSpec::Kind::DataSeeded && cfg.loss != LossKind::CrossEntropy)
    throw ConfigError("data_seeded init needs the cross_entropy convention");
  return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  return experiment_config_from_kv(KvConfig::parse_file(path));
}

}  // namespace ncflow
