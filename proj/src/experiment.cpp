#include "ncflow/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "ncflow/checkpoint.hpp"

namespace ncflow {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void append_num(std::string& out, double v) {
  if (std::isnan(v)) {
    out += "nan";
    return;
  }
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, res.ptr);
}

json vector_to_json(const Vector& v) {
  json a = json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Vector vector_from_json(const json& a) {
  Vector v(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<int>(i)] = a[i].get<double>();
  return v;
}

double finite_or_null(const json& j, const char* key) {
  return j.contains(key) && !j.at(key).is_null() ? j.at(key).get<double>()
                                                 : std::numeric_limits<double>::quiet_NaN();
}

json opt_to_json(const std::optional<double>& v) {
  return v.has_value() ? json(*v) : json(nullptr);
}

}  // namespace

json to_json(const SeparabilityCertificate& cert) {
  json j;
  j["mu_s"] = cert.mu_s;
  j["mu_d"] = cert.mu_d;
  j["x_min"] = cert.x_min;
  j["x_max"] = cert.x_max;
  j["strict_ratio"] = std::isnan(cert.strict_ratio) ? json(nullptr) : json(cert.strict_ratio);
  j["is_orthogonally_separable"] = cert.is_orthogonally_separable;
  j["satisfies_strict_condition"] = cert.satisfies_strict_condition;
  j["same_pairs"] = cert.same_pairs;
  j["cross_pairs"] = cert.cross_pairs;
  j["same_violations"] = cert.same_violations;
  j["cross_violations"] = cert.cross_violations;
  j["tolerance"] = cert.tolerance;
  return j;
}

json to_json(const MarginCertificate& cert) {
  json classes = json::array();
  for (const MarginSolution& sol : cert.per_class) {
    json c;
    c["gamma"] = sol.gamma;
    c["gap"] = sol.gap;
    c["u"] = vector_to_json(sol.u);
    c["support_size"] = (sol.support_weights.array() > 0.0).count();
    c["iterations"] = sol.iterations;
    classes.push_back(c);
  }
  json j;
  j["classes"] = classes;
  j["gammas"] = vector_to_json(cert.gammas);
  j["s"] = vector_to_json(cert.s);
  j["tol"] = cert.tol;
  return j;
}

json to_json(const CollapseReport& rep) {
  json classes = json::array();
  for (const ClassCollapse& c : rep.classes) {
    json e;
    e["class"] = c.cls;
    e["samples"] = c.samples;
    e["vacuous"] = c.vacuous;
    e["rank1_residual"] = c.rank1_residual;
    e["collapse_residual"] = c.collapse_residual;
    e["scale_residual"] = c.scale_residual;
    e["w_fro"] = c.w_fro;
    e["v_fro"] = c.v_fro;
    e["w_dir_cos_u"] = c.w_dir_cos_u;
    e["v_mean_cos"] = c.v_mean_cos;
    e["min_mean_entry"] = c.min_mean_entry;
    classes.push_back(e);
  }
  json j;
  j["nc1"] = opt_to_json(rep.nc.nc1);
  j["nc2"] = opt_to_json(rep.nc.nc2);
  j["nc3"] = opt_to_json(rep.nc.nc3);
  j["classes"] = classes;
  j["orthogonality"] = rep.orthogonality;
  j["min_mean_entry"] = rep.min_mean_entry;
  j["duality_residual"] = rep.duality_residual;
  j["max_rank1_residual"] = rep.max_rank1_residual;
  j["max_collapse_residual"] = rep.max_collapse_residual;
  j["max_scale_rel_error"] = rep.max_scale_rel_error;
  j["min_w_dir_cos"] = rep.min_w_dir_cos;
  j["min_v_mean_cos"] = rep.min_v_mean_cos;
  return j;
}

json to_json(const KktReport& rep) {
  json classes = json::array();
  for (const KktClassReport& c : rep.classes) {
    json e;
    e["class"] = c.cls;
    e["min_margin_raw"] = c.min_margin_raw;
    e["feasibility_violations"] = c.feasibility_violations;
    e["max_feasibility_violation"] = c.max_feasibility_violation;
    e["stationarity_residual"] =
        std::isnan(c.stationarity_residual) ? json(nullptr) : json(c.stationarity_residual);
    e["comp_slack_max"] = c.comp_slack_max;
    e["active_constraints"] = c.active_constraints;
    classes.push_back(e);
  }
  json j;
  j["rescaled"] = rep.rescaled;
  j["rescale"] = rep.rescale;
  j["min_margin_raw"] = rep.min_margin_raw;
  j["classes"] = classes;
  j["stationarity_max"] =
      std::isnan(rep.stationarity_max) ? json(nullptr) : json(rep.stationarity_max);
  j["feasibility_violations_total"] = rep.feasibility_violations_total;
  j["max_feasibility_violation"] = rep.max_feasibility_violation;
  return j;
}

json to_json(const EnvelopeReport& rep) {
  json j;
  j["window"] = rep.window;
  j["covered"] = rep.covered;
  j["holds"] = rep.holds;
  j["max_w_norm_sq"] = rep.max_w_norm_sq;
  j["w_bound"] = rep.w_bound;
  j["w_margin"] = rep.w_margin;
  j["max_output_norm"] = rep.max_output_norm;
  j["f_bound"] = rep.f_bound;
  j["f_margin"] = rep.f_margin;
  j["rows_checked"] = rep.rows_checked;
  return j;
}

json to_json(const NonDegenerateReport& rep) {
  json j;
  j["satisfied"] = rep.satisfied;
  j["zero_v_indices"] = rep.zero_v_indices;
  j["n_plus"] = rep.n_plus;
  j["n_minus"] = rep.n_minus;
  j["activation_plus"] = rep.activation_plus;
  j["activation_minus"] = rep.activation_minus;
  j["repeller_plus_cos"] = rep.repeller_plus_cos;
  j["repeller_minus_cos"] = rep.repeller_minus_cos;
  j["repeller_slack"] = rep.repeller_slack;
  return j;
}

json to_json(const SemiLocalReport& rep) {
  json neurons = json::array();
  for (const SemiLocalNeuron& n : rep.neurons) {
    json e;
    e["neuron"] = n.neuron;
    e["class"] = n.cls;
    e["count_slack"] = n.count_slack;
    e["aggregate_slack"] = n.aggregate_slack;
    e["pseudo_alignment"] = n.pseudo_alignment;
    e["pseudo_slack"] = n.pseudo_slack;
    e["ok"] = n.ok;
    neurons.push_back(e);
  }
  json j;
  j["all_satisfied"] = rep.all_satisfied;
  j["partition"] = rep.partition;
  j["neurons"] = neurons;
  return j;
}

std::string diagnostics_csv(const TrajectoryLog& log, int num_classes) {
  std::string out =
      "step,time,eta,loss,theta_fro,max_w_norm_sq,max_balance_gap,max_feature_norm,"
      "max_output_norm,"
      "separated,violations,max_cross_gram,decomposition_gap,align_residual_w,"
      "align_residual_v,align_bound,in_regime,boundary_events";
  for (int k = 0; k < num_classes; ++k) out += ",cos_max_" + std::to_string(k);
  out.push_back('\n');
  for (const DiagRow& row : log.rows) {
    out += std::to_string(row.step);
    out.push_back(',');
    append_num(out, row.time);
    out.push_back(',');
    append_num(out, row.eta);
    out.push_back(',');
    append_num(out, row.loss);
    out.push_back(',');
    append_num(out, row.theta_fro);
    out.push_back(',');
    append_num(out, row.max_w_norm_sq);
    out.push_back(',');
    append_num(out, row.max_balance_gap);
    out.push_back(',');
    append_num(out, row.max_feature_norm);
    out.push_back(',');
    append_num(out, row.max_output_norm);
    out.push_back(',');
    out += row.separated ? '1' : '0';
    out.push_back(',');
    out += std::to_string(row.separation_violations);
    out.push_back(',');
    append_num(out, row.max_cross_gram);
    out.push_back(',');
    append_num(out, row.loss_decomposition_gap);
    out.push_back(',');
    append_num(out, row.alignment_residual_w);
    out.push_back(',');
    append_num(out, row.alignment_residual_v);
    out.push_back(',');
    append_num(out, row.alignment_bound);
    out.push_back(',');
    out += row.in_regime ? '1' : '0';
    out.push_back(',');
    out += std::to_string(row.boundary_events);
    for (int k = 0; k < num_classes; ++k) {
      double best = -2.0;
      for (const auto& per_neuron : row.cos_to_class_mean)
        best = std::max(best, per_neuron[k]);
      out.push_back(',');
      append_num(out, best);
    }
    out.push_back('\n');
  }
  return out;
}

namespace {

struct VerificationCheck {
  std::string name;
  double value = 0.0;
  double threshold = 0.0;
  bool at_most = true;  // value <= threshold (else value >= threshold)
  bool pass = false;
};

json checks_to_json(const std::vector<VerificationCheck>& checks) {
  json a = json::array();
  for (const auto& c : checks) {
    json e;
    e["name"] = c.name;
    e["value"] = std::isnan(c.value) ? json(nullptr) : json(c.value);
    e["threshold"] = c.threshold;
    e["relation"] = c.at_most ? "<=" : ">=";
    e["pass"] = c.pass;
    a.push_back(e);
  }
  return a;
}

Dataset build_dataset(const DatasetSpec& spec, json& manifest) {
  Dataset data;
  switch (spec.source) {
    case DatasetSpec::Source::Generate:
      data = generate_separable(spec.generate);
      break;
    case DatasetSpec::Source::Idx:
      data = load_idx(spec.images_path, spec.labels_path, spec.keep_classes,
                      spec.max_per_class);
      break;
    case DatasetSpec::Source::Csv:
      data = load_csv(spec.csv_path);
      break;
  }
  if (spec.center) {
    CenterResult c = center_dataset(data);
    manifest["dataset"]["centered_dropped"] = c.dropped_points;
    data = std::move(c.data);
  }
  if (spec.augment_bias) data = augment_bias(data);
  manifest["dataset"]["n"] = data.n();
  manifest["dataset"]["dim"] = data.dim();
  manifest["dataset"]["classes"] = data.num_classes;
  manifest["dataset"]["source_labels"] = data.source_labels;
  return data;
}

json config_echo(const ExperimentConfig& cfg) {
  json j;
  j["loss"] = loss_kind_name(cfg.loss);
  j["init"]["width"] = cfg.init.width;
  j["init"]["epsilon"] =
      cfg.init.epsilon > 0.0 ? cfg.init.epsilon : default_epsilon(cfg.init.width);
  j["init"]["seed"] = cfg.init.seed;
  j["init"]["kind"] =
      cfg.init.kind == InitSpec::Kind::RandomBalanced ? "random" : "data_seeded";
  if (cfg.use_sgd) {
    j["flow"]["mode"] = "sgd";
    j["flow"]["batch"] = cfg.sgd.batch;
    j["flow"]["epochs"] = cfg.sgd.epochs;
    j["flow"]["lr"] = cfg.sgd.lr;
    j["flow"]["seed"] = cfg.sgd.seed;
  } else {
    j["flow"]["mode"] =
        cfg.flow.step_mode == StepModeKind::Fixed ? "fixed" : "loss_adaptive";
    j["flow"]["eta"] = cfg.flow.eta;
    j["flow"]["eta_base"] = cfg.flow.eta_base;
    j["flow"]["eta_cap"] = cfg.flow.eta_cap;
    j["flow"]["max_steps"] = cfg.flow.max_steps;
    j["flow"]["log_every"] = cfg.flow.log_every;
    j["flow"]["stop_loss"] = cfg.flow.stop_loss;
    j["flow"]["subgrad_at_zero"] = cfg.flow.subgrad_at_zero;
  }
  switch (cfg.dataset.source) {
    case DatasetSpec::Source::Generate:
      j["dataset"]["source"] = "generate";
      j["dataset"]["classes"] = cfg.dataset.generate.num_classes;
      j["dataset"]["dim"] = cfg.dataset.generate.dim;
      j["dataset"]["per_class"] = cfg.dataset.generate.points_per_class;
      j["dataset"]["cone_half_angle"] = cfg.dataset.generate.cone_half_angle;
      j["dataset"]["norm_lo"] = cfg.dataset.generate.norm_lo;
      j["dataset"]["norm_hi"] = cfg.dataset.generate.norm_hi;
      j["dataset"]["seed"] = cfg.dataset.generate.seed;
      break;
    case DatasetSpec::Source::Idx:
      j["dataset"]["source"] = "idx";
      j["dataset"]["images"] = cfg.dataset.images_path;
      j["dataset"]["labels"] = cfg.dataset.labels_path;
      j["dataset"]["keep"] = cfg.dataset.keep_classes;
      j["dataset"]["max_per_class"] = cfg.dataset.max_per_class;
      break;
    case DatasetSpec::Source::Csv:
      j["dataset"]["source"] = "csv";
      j["dataset"]["path"] = cfg.dataset.csv_path;
      break;
  }
  j["dataset"]["center"] = cfg.dataset.center;
  j["dataset"]["augment_bias"] = cfg.dataset.augment_bias;
  return j;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  f << text;
}

}  // namespace

RunArtifacts run_experiment(const ExperimentConfig& cfg, const RunOptions& opt) {
  RunArtifacts art;
  art.manifest["config"] = config_echo(cfg);
  const std::string out_dir = !opt.out_dir.empty() ? opt.out_dir : cfg.out_dir;
  const auto t0 = std::chrono::steady_clock::now();

  auto fail = [&](int code, const std::string& stage, const std::string& msg) {
    art.exit_code = code;
    art.failure_stage = stage;
    art.message = msg;
    art.manifest["status"] = "failed";
    art.manifest["failure_stage"] = stage;
    art.manifest["reason"] = msg;
    if (opt.log_level > 0) std::cerr << "[" << stage << "] " << msg << "\n";
    return art;
  };

  if (opt.dry_run) {
    art.manifest["status"] = "dry_run";
    if (opt.log_level > 0) std::cout << art.manifest.dump(2) << "\n";
    return art;
  }
  if (opt.write_files && out_dir.empty())
    return fail(kExitConfig, "config", "no output directory (set [output] dir, --out, "
                                       "or NCFLOW_OUT_ROOT)");

  // Stage: dataset.
  Dataset data;
  SeparabilityCertificate cert;
  try {
    data = build_dataset(cfg.dataset, art.manifest);
    cert = validate_separability(data);
  } catch (const std::exception& e) {
    return fail(kExitData, "data", e.what());
  }
  art.certificate = cert;
  art.manifest["separability"] = to_json(cert);

  // Stage: init.
  const int k = data.num_classes;
  const int d_y = cfg.loss == LossKind::CrossEntropy ? k : 1;
  const double epsilon =
      cfg.init.epsilon > 0.0 ? cfg.init.epsilon : default_epsilon(cfg.init.width);
  InitShape shape;
  std::vector<int> partition;
  try {
    if (cfg.loss == LossKind::CrossEntropy && k < 3)
      throw ConfigError("cross_entropy needs K >= 3");
    if (cfg.loss != LossKind::CrossEntropy && k != 2)
      throw ConfigError("binary losses need K == 2");
    if (cfg.init.kind == InitSpec::Kind::DataSeeded) {
      SeededShapes seeded = data_seeded_shapes(data, cfg.init.width, epsilon, cfg.init.seed);
      shape = std::move(seeded.shape);
      partition = std::move(seeded.partition);
    } else {
      shape = random_balanced(data.dim(), d_y, cfg.init.width, epsilon, cfg.init.seed);
      if (cfg.loss == LossKind::CrossEntropy) {
        // Canonical partition for random shapes: best pseudo-label alignment.
        const Matrix frame = pseudo_label_frame(k);
        partition.resize(cfg.init.width);
        for (int j = 0; j < cfg.init.width; ++j) {
          int best = 0;
          double best_dot = -2.0;
          const Vector v = shape.v_shapes.col(j) / shape.v_shapes.col(j).norm();
          for (int c = 0; c < k; ++c) {
            const double dot = frame.col(c).dot(v);
            if (dot > best_dot) {
              best_dot = dot;
              best = c;
            }
          }
          partition[j] = best;
        }
      }
    }
    check_shape_invariants(shape);

    bool checks_ok = true;
    if (cfg.loss == LossKind::CrossEntropy) {
      const SemiLocalReport rep = check_semi_local(shape, data, partition);
      art.manifest["init_check"] = to_json(rep);
      art.manifest["init_check"]["kind"] = "semi_local";
      checks_ok = rep.all_satisfied;
    } else {
      const NonDegenerateReport rep = check_non_degenerate(shape, data);
      art.manifest["init_check"] = to_json(rep);
      art.manifest["init_check"]["kind"] = "non_degenerate";
      checks_ok = rep.satisfied;
      partition = sign_partition(materialize(shape, cfg.loss));
    }
    if (cfg.init.require_checks && !checks_ok)
      throw DataError("initialization shape fails its assumption check");
  } catch (const ConfigError& e) {
    return fail(kExitConfig, "config", e.what());
  } catch (const std::exception& e) {
    return fail(kExitData, "data", e.what());
  }

  // Stage: flow.
  NetParams start = materialize(shape, cfg.loss);
  TrajectoryLog log;
  std::vector<json> nc_series;  // SGD mode: per-epoch NC metrics
  try {
    if (cfg.use_sgd) {
      NetParams finalp = run_sgd(start, data, cfg.sgd, [&](int epoch, const NetParams& p) {
        const Matrix feats = features_all(p, data.points);
        const NCMetrics m = nc_metrics(feats, data.labels, k, p.V);
        json e;
        e["epoch"] = epoch;
        e["loss"] = loss(p, data);
        e["nc1"] = opt_to_json(m.nc1);
        e["nc2"] = opt_to_json(m.nc2);
        e["nc3"] = opt_to_json(m.nc3);
        nc_series.push_back(e);
      });
      log.initial = start;
      log.final_params = finalp;
      log.partition = partition;
      log.stop_reason = StopReason::MaxSteps;
      art.manifest["flow"]["mode"] = "sgd";
      art.manifest["flow"]["nc_series"] = nc_series;
    } else {
      FlowConfig fc = cfg.flow;
      fc.epsilon = epsilon;
      log = run_flow(start, data, fc, partition);
      art.manifest["flow"]["stop_reason"] = stop_reason_name(log.stop_reason);
      art.manifest["flow"]["steps"] = log.steps;
      art.manifest["flow"]["integrated_time"] = log.integrated_time;
      art.manifest["flow"]["final_loss"] = log.rows.empty() ? json(nullptr)
                                                            : json(log.rows.back().loss);
      art.manifest["flow"]["tstar_step"] =
          log.tstar_step.has_value() ? json(*log.tstar_step) : json(nullptr);
      art.manifest["flow"]["tstar_time"] =
          log.tstar_time.has_value() ? json(*log.tstar_time) : json(nullptr);
      art.manifest["flow"]["separation_reverted"] = log.separation_reverted;
      if (log.stop_reason == StopReason::NonFinite)
        throw FlowError("loss or gradient became non-finite");

      art.envelope = small_norm_envelope_check(log, epsilon, data);
      art.manifest["small_norm_envelope"] = to_json(*art.envelope);
    }
  } catch (const std::exception& e) {
    art.log = std::move(log);
    return fail(kExitFlow, "flow", e.what());
  }

  // Stage: margin oracle + collapse certification.
  MarginCertificate margins;
  CollapseReport collapse;
  KktReport kkt;
  SeparationReport final_sep;
  std::vector<int> effective_partition = partition;
  try {
    margins = compute_margin_certificate(data);
    art.margin_certificate = margins;
    art.manifest["margin_certificate"] = to_json(margins);

    NetParams direction = log.final_params;
    const double fro = std::sqrt(direction.W.squaredNorm() + direction.V.squaredNorm());
    if (fro == 0.0) throw DataError("final parameters are identically zero");
    direction.W /= fro;
    direction.V /= fro;

    // Binary groups follow the signs of the final output weights.
    std::vector<int> group_partition =
        cfg.loss == LossKind::CrossEntropy ? partition : sign_partition(direction);
    final_sep = detect_separation(direction, data, group_partition);
    if (final_sep.separated) {
      // Dead neurons are excluded from the per-class factors.
      effective_partition.assign(direction.width(), -1);
      for (int c = 0; c < k; ++c) {
        for (int j : final_sep.aligned_groups[c]) effective_partition[j] = c;
      }
    } else {
      effective_partition = group_partition;
    }
    art.manifest["final_separation"]["separated"] = final_sep.separated;
    art.manifest["final_separation"]["violations"] =
        static_cast<long>(final_sep.violations.size());
    art.manifest["final_separation"]["max_cross_gram"] = final_sep.max_cross_gram;
    art.manifest["final_separation"]["partition"] = effective_partition;

    collapse = limit_residuals(direction, data, effective_partition, margins);
    art.collapse = collapse;
    art.manifest["collapse_report"] = to_json(collapse);

    if (final_sep.separated) {
      kkt = kkt_residual(direction, data, effective_partition);
      art.kkt = kkt;
      art.manifest["kkt_report"] = to_json(kkt);
    }
  } catch (const std::exception& e) {
    art.log = std::move(log);
    return fail(kExitData, "data", e.what());
  }

  // Stage: verification.
  std::vector<VerificationCheck> checks;
  auto add_check = [&](const std::string& name, double value, double threshold,
                       bool at_most) {
    VerificationCheck c;
    c.name = name;
    c.value = value;
    c.threshold = threshold;
    c.at_most = at_most;
    c.pass = at_most ? value <= threshold : value >= threshold;
    checks.push_back(c);
  };
  bool all_pass = true;
  if (cfg.verify.enabled && !cfg.use_sgd) {
    if (cfg.verify.require_separation) {
      VerificationCheck c;
      c.name = "separated";
      c.value = final_sep.separated ? 1.0 : 0.0;
      c.threshold = 1.0;
      c.at_most = false;
      c.pass = final_sep.separated && !log.separation_reverted;
      checks.push_back(c);
    }
    add_check("rank1_residual", collapse.max_rank1_residual, cfg.verify.rank1_max, true);
    add_check("orthogonality", collapse.orthogonality, cfg.verify.orthogonality_max, true);
    add_check("duality_residual", collapse.duality_residual, cfg.verify.duality_max, true);
    add_check("scale_rel_error", collapse.max_scale_rel_error, cfg.verify.scale_rel_max, true);
    add_check("w_dir_cos", collapse.min_w_dir_cos, cfg.verify.w_cos_min, false);
    add_check("v_mean_cos", collapse.min_v_mean_cos, cfg.verify.v_cos_min, false);
    if (!log.rows.empty() && log.tstar_step.has_value()) {
      double worst_gap = 0.0;
      for (const DiagRow& row : log.rows) {
        if (row.separated && std::isfinite(row.loss_decomposition_gap))
          worst_gap = std::max(worst_gap, row.loss_decomposition_gap);
      }
      add_check("loss_decomposition_gap", worst_gap, cfg.verify.decomposition_gap_max, true);
    }
    for (const auto& c : checks) all_pass &= c.pass;
  }
  art.manifest["verification"]["enabled"] = cfg.verify.enabled && !cfg.use_sgd;
  art.manifest["verification"]["checks"] = checks_to_json(checks);
  art.manifest["verification"]["all_pass"] = all_pass;
  art.manifest["status"] = all_pass ? "ok" : "verification_failed";
  art.manifest["wall_seconds"] =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  // Write artifacts.
  if (opt.write_files) {
    try {
      fs::create_directories(out_dir);
      save_csv(data, (fs::path(out_dir) / "dataset.csv").string());
      save_params(log.final_params, (fs::path(out_dir) / "checkpoint_final.bin").string());
      save_shape(shape, (fs::path(out_dir) / "checkpoint_init_shape.bin").string(),
                 cfg.init.seed);
      if (log.at_separation.has_value())
        save_params(*log.at_separation,
                    (fs::path(out_dir) / "checkpoint_tstar.bin").string());
      if (!cfg.use_sgd)
        write_text(fs::path(out_dir) / "diagnostics.csv",
                   diagnostics_csv(log, data.num_classes));
      if (!nc_series.empty()) {
        std::string csv = "epoch,metric,value\n";
        for (const json& e : nc_series) {
          for (const char* m : {"nc1", "nc2", "nc3"}) {
            csv += std::to_string(e.at("epoch").get<int>());
            csv.push_back(',');
            csv += m;
            csv.push_back(',');
            append_num(csv, finite_or_null(e, m));
            csv.push_back('\n');
          }
        }
        write_text(fs::path(out_dir) / "nc_series.csv", csv);
      }
      write_text(fs::path(out_dir) / "manifest.json", art.manifest.dump(2) + "\n");
    } catch (const std::exception& e) {
      art.log = std::move(log);
      return fail(kExitData, "data", std::string("artifact write failed: ") + e.what());
    }
  }

  art.data = std::move(data);
  art.log = std::move(log);
  if (!all_pass) {
    art.exit_code = kExitVerification;
    art.failure_stage = "verification";
    art.message = "one or more verifications failed";
  }
  if (opt.log_level > 0) {
    for (const auto& c : checks) {
      std::cout << (c.pass ? "PASS " : "FAIL ") << c.name << " = " << c.value
                << (c.at_most ? " <= " : " >= ") << c.threshold << "\n";
    }
    std::cout << "status: " << art.manifest["status"].get<std::string>() << "\n";
  }
  return art;
}

int verify_run_dir(const std::string& run_dir, double tol, int log_level) {
  json manifest;
  Dataset data;
  NetParams finalp;
  try {
    std::ifstream mf(fs::path(run_dir) / "manifest.json");
    if (!mf) throw DataError("missing manifest.json in " + run_dir);
    manifest = json::parse(mf);
    data = load_csv((fs::path(run_dir) / "dataset.csv").string());
    finalp = load_params((fs::path(run_dir) / "checkpoint_final.bin").string());
  } catch (const json::exception& e) {
    if (log_level > 0) std::cerr << "[data] manifest parse error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    if (log_level > 0) std::cerr << "[data] " << e.what() << "\n";
    return kExitData;
  }

  int failures = 0;
  auto compare = [&](const std::string& name, double stored, double recomputed) {
    const bool ok = (std::isnan(stored) && std::isnan(recomputed)) ||
                    std::abs(stored - recomputed) <= tol;
    if (!ok) ++failures;
    if (log_level > 0) {
      std::cout << (ok ? "PASS " : "FAIL ") << name << " stored=" << stored
                << " recomputed=" << recomputed << "\n";
    }
  };

  try {
    const MarginCertificate margins = compute_margin_certificate(data);
    const json& stored_m = manifest.at("margin_certificate");
    for (int k = 0; k < data.num_classes; ++k) {
      compare("gamma_" + std::to_string(k), stored_m.at("gammas")[k].get<double>(),
              margins.gammas[k]);
      compare("s_" + std::to_string(k), stored_m.at("s")[k].get<double>(), margins.s[k]);
      const Vector stored_u = vector_from_json(stored_m.at("classes")[k].at("u"));
      compare("u_cos_" + std::to_string(k), 1.0, stored_u.dot(margins.per_class[k].u));
    }

    NetParams direction = finalp;
    const double fro = std::sqrt(direction.W.squaredNorm() + direction.V.squaredNorm());
    direction.W /= fro;
    direction.V /= fro;
    std::vector<int> partition =
        manifest.at("final_separation").at("partition").get<std::vector<int>>();
    const CollapseReport rep = limit_residuals(direction, data, partition, margins);
    const json& stored_c = manifest.at("collapse_report");
    compare("rank1_residual", finite_or_null(stored_c, "max_rank1_residual"),
            rep.max_rank1_residual);
    compare("collapse_residual", finite_or_null(stored_c, "max_collapse_residual"),
            rep.max_collapse_residual);
    compare("orthogonality", finite_or_null(stored_c, "orthogonality"), rep.orthogonality);
    compare("duality_residual", finite_or_null(stored_c, "duality_residual"),
            rep.duality_residual);
    compare("scale_rel_error", finite_or_null(stored_c, "max_scale_rel_error"),
            rep.max_scale_rel_error);
    compare("w_dir_cos", finite_or_null(stored_c, "min_w_dir_cos"), rep.min_w_dir_cos);
    compare("v_mean_cos", finite_or_null(stored_c, "min_v_mean_cos"), rep.min_v_mean_cos);
  } catch (const std::exception& e) {
    if (log_level > 0) std::cerr << "[verification] " << e.what() << "\n";
    return kExitVerification;
  }
  if (failures > 0) {
    if (log_level > 0) std::cout << failures << " residual(s) out of tolerance\n";
    return kExitVerification;
  }
  if (log_level > 0) std::cout << "verification ok\n";
  return kExitOk;
}

namespace {

struct SweepCell {
  double epsilon = -1.0;
  double seed = -1.0;
  double cone = -1.0;
  std::string mode;
};

double quantile(std::vector<double> v, double q) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const double pos = q * (v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - lo) * (v[hi] - v[lo]);
}

}  // namespace

int run_sweep(const KvConfig& base, const std::string& out_dir, int jobs, int log_level) {
  std::vector<double> epsilons{-1.0}, seeds{-1.0}, cones{-1.0};
  std::vector<std::string> modes{""};
  try {
    if (base.has("sweep", "epsilon")) epsilons = base.get_number_list("sweep", "epsilon");
    if (base.has("sweep", "seed")) seeds = base.get_number_list("sweep", "seed");
    if (base.has("sweep", "cone_half_angle"))
      cones = base.get_number_list("sweep", "cone_half_angle");
    if (base.has("sweep", "step_mode")) modes = base.get_string_list("sweep", "step_mode");
  } catch (const ConfigError& e) {
    if (log_level > 0) std::cerr << "[config] " << e.what() << "\n";
    return kExitConfig;
  }
  const bool empty_grid = !base.has_section("sweep") || base.keys("sweep").empty();

  std::vector<SweepCell> cells;
  if (!empty_grid) {
    for (double e : epsilons)
      for (double s : seeds)
        for (double c : cones)
          for (const std::string& m : modes) cells.push_back({e, s, c, m});
  }

  struct CellResult {
    SweepCell cell;
    int exit_code = -1;
    std::string stage;
    bool init_ok = false;
    bool separated = false;
    double tstar = std::numeric_limits<double>::quiet_NaN();
    double rank1 = std::numeric_limits<double>::quiet_NaN();
    double duality = std::numeric_limits<double>::quiet_NaN();
    double orthogonality = std::numeric_limits<double>::quiet_NaN();
    double w_cos = std::numeric_limits<double>::quiet_NaN();
    double v_cos = std::numeric_limits<double>::quiet_NaN();
    double scale_rel = std::numeric_limits<double>::quiet_NaN();
    double small_norm_margin = std::numeric_limits<double>::quiet_NaN();
    std::string stop_reason;
  };
  std::vector<CellResult> results(cells.size());

#pragma omp parallel for schedule(dynamic) num_threads(std::max(1, jobs))
  for (long c = 0; c < static_cast<long>(cells.size()); ++c) {
    const SweepCell& cell = cells[c];
    CellResult r;
    r.cell = cell;
    try {
      KvConfig kv = base;
      if (cell.epsilon >= 0.0) kv.set_number("init", "epsilon", cell.epsilon);
      if (cell.seed >= 0.0) kv.set_number("init", "seed", cell.seed);
      if (cell.cone >= 0.0) kv.set_number("dataset", "cone_half_angle", cell.cone);
      if (!cell.mode.empty()) kv.set_string("flow", "mode", cell.mode);
      const ExperimentConfig cfg = experiment_config_from_kv(kv);
      RunOptions opt;
      opt.write_files = false;
      opt.log_level = 0;
      const RunArtifacts art = run_experiment(cfg, opt);
      r.exit_code = art.exit_code;
      r.stage = art.failure_stage;
      r.init_ok = art.failure_stage != "data" && art.failure_stage != "config";
      if (art.manifest.contains("init_check"))
        r.init_ok = art.manifest["init_check"].value("all_satisfied",
                                                     art.manifest["init_check"].value("satisfied", false));
      if (art.collapse.has_value()) {
        r.rank1 = art.collapse->max_rank1_residual;
        r.duality = art.collapse->duality_residual;
        r.orthogonality = art.collapse->orthogonality;
        r.w_cos = art.collapse->min_w_dir_cos;
        r.v_cos = art.collapse->min_v_mean_cos;
        r.scale_rel = art.collapse->max_scale_rel_error;
      }
      if (art.envelope.has_value()) r.small_norm_margin = art.envelope->w_margin;
      if (art.log.has_value()) {
        r.separated = art.log->tstar_step.has_value() && !art.log->separation_reverted;
        if (art.log->tstar_time.has_value()) r.tstar = *art.log->tstar_time;
        r.stop_reason = stop_reason_name(art.log->stop_reason);
      }
    } catch (const std::exception& e) {
      r.exit_code = kExitFlow;
      r.stage = std::string("exception: ") + e.what();
    }
    results[c] = std::move(r);
  }

  std::string csv =
      "epsilon,seed,cone_half_angle,step_mode,exit_code,stage,init_check,separated,"
      "tstar_time,rank1,duality,orthogonality,w_cos,v_cos,scale_rel,"
      "small_norm_margin,stop_reason\n";
  for (const auto& r : results) {
    append_num(csv, r.cell.epsilon);
    csv.push_back(',');
    append_num(csv, r.cell.seed);
    csv.push_back(',');
    append_num(csv, r.cell.cone);
    csv.push_back(',');
    csv += r.cell.mode;
    csv.push_back(',');
    csv += std::to_string(r.exit_code);
    csv.push_back(',');
    csv += r.stage;
    csv.push_back(',');
    csv += r.init_ok ? '1' : '0';
    csv.push_back(',');
    csv += r.separated ? '1' : '0';
    for (double v : {r.tstar, r.rank1, r.duality, r.orthogonality, r.w_cos, r.v_cos,
                     r.scale_rel, r.small_norm_margin}) {
      csv.push_back(',');
      append_num(csv, v);
    }
    csv.push_back(',');
    csv += r.stop_reason;
    csv.push_back('\n');
  }

  std::string agg = "metric,count,pass_rate,q10,q50,q90\n";
  {
    long pass = 0, init_pass = 0;
    for (const auto& r : results) {
      if (r.exit_code == kExitOk) ++pass;
      if (r.init_ok) ++init_pass;
    }
    auto add_metric = [&](const std::string& name,
                          const std::function<double(const CellResult&)>& get) {
      std::vector<double> vals;
      for (const auto& r : results) {
        const double v = get(r);
        if (std::isfinite(v)) vals.push_back(v);
      }
      agg += name + "," + std::to_string(vals.size()) + ",,";
      append_num(agg, quantile(vals, 0.10));
      agg.push_back(',');
      append_num(agg, quantile(vals, 0.50));
      agg.push_back(',');
      append_num(agg, quantile(vals, 0.90));
      agg.push_back('\n');
    };
    const double denom = results.empty() ? 1.0 : static_cast<double>(results.size());
    agg += "run_pass," + std::to_string(results.size()) + ",";
    append_num(agg, pass / denom);
    agg += ",,,\n";
    agg += "init_check_pass," + std::to_string(results.size()) + ",";
    append_num(agg, init_pass / denom);
    agg += ",,,\n";
    add_metric("rank1", [](const CellResult& r) { return r.rank1; });
    add_metric("duality", [](const CellResult& r) { return r.duality; });
    add_metric("small_norm_margin", [](const CellResult& r) { return r.small_norm_margin; });
    add_metric("tstar_time", [](const CellResult& r) { return r.tstar; });
  }

  try {
    fs::create_directories(out_dir);
    write_text(fs::path(out_dir) / "summary.csv", csv);
    write_text(fs::path(out_dir) / "aggregates.csv", agg);
  } catch (const std::exception& e) {
    if (log_level > 0) std::cerr << "[data] " << e.what() << "\n";
    return kExitData;
  }
  if (log_level > 0)
    std::cout << "sweep cells: " << results.size() << " -> " << out_dir << "\n";
  return kExitOk;
}

}  // namespace ncflow
