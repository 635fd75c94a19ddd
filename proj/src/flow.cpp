#include "ncflow/flow.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>

#include "ncflow/rng.hpp"

namespace ncflow {

std::string stop_reason_name(StopReason reason) {
  switch (reason) {
    case StopReason::LossThreshold: return "loss_threshold";
    case StopReason::DirectionalStationarity: return "directional_stationarity";
    case StopReason::MaxSteps: return "max_steps";
    case StopReason::WallTime: return "wall_time";
    case StopReason::NonFinite: return "non_finite";
  }
  return "?";
}

std::vector<int> sign_partition(const NetParams& params) {
  if (params.out_dim() != 1) throw ConfigError("sign partition needs a scalar output");
  std::vector<int> part(params.width());
  for (int j = 0; j < params.width(); ++j) {
    const double v = params.V(0, j);
    part[j] = v > 0.0 ? 0 : (v < 0.0 ? 1 : -1);
  }
  return part;
}

SeparationReport detect_separation(const NetParams& params, const Dataset& data,
                                   const std::vector<int>& partition) {
  const int h = params.width();
  const int n = data.n();
  const int K = data.num_classes;
  if (static_cast<int>(partition.size()) != h)
    throw DataError("partition size does not match width");

  SeparationReport rep;
  rep.roles.assign(h, NeuronRole::Dead);
  rep.aligned_groups.assign(K, {});

  const Matrix z = params.W.transpose() * data.points;  // h x n
  for (int j = 0; j < h; ++j) {
    const int cls = partition[j];
    bool any_active = false;
    bool all_own_active = cls >= 0;
    bool off_class_active = false;
    for (int i = 0; i < n; ++i) {
      const bool active = z(j, i) > 0.0;
      any_active |= active;
      if (cls >= 0 && data.labels[i] == cls) {
        all_own_active &= active;
      } else if (active) {
        off_class_active = true;
        rep.violations.emplace_back(j, i);
      }
    }
    if (!any_active) {
      rep.roles[j] = NeuronRole::Dead;
    } else if (cls >= 0 && all_own_active && !off_class_active) {
      rep.roles[j] = NeuronRole::Aligned;
      rep.aligned_groups[cls].push_back(j);
    } else {
      rep.roles[j] = NeuronRole::Violating;
      if (cls >= 0 && !off_class_active) {
        // Partially active on its own class: record the missed samples.
        for (int i : data.class_indices[cls]) {
          if (!(z(j, i) > 0.0)) rep.violations.emplace_back(j, i);
        }
      }
    }
  }

  bool groups_ok = true;
  for (const auto& grp : rep.aligned_groups) {
    if (grp.empty()) groups_ok = false;
  }
  bool no_violators = true;
  for (NeuronRole r : rep.roles) {
    if (r == NeuronRole::Violating) no_violators = false;
  }
  rep.separated = groups_ok && no_violators;

  // Feature orthogonality across classes: exact once the sign pattern holds.
  const Matrix feats = z.cwiseMax(0.0);
  double worst = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int i2 = i + 1; i2 < n; ++i2) {
      if (data.labels[i] == data.labels[i2]) continue;
      worst = std::max(worst, std::abs(feats.col(i).dot(feats.col(i2))));
    }
  }
  rep.max_cross_gram = worst;
  return rep;
}

double decomposed_loss(const NetParams& params, const Dataset& data,
                       const std::vector<std::vector<int>>& aligned_groups) {
  double total = 0.0;
  for (int k = 0; k < data.num_classes; ++k) {
    const auto& grp = aligned_groups[k];
    Matrix wk(params.dim(), grp.size());
    Matrix vk(params.out_dim(), grp.size());
    for (std::size_t c = 0; c < grp.size(); ++c) {
      wk.col(c) = params.W.col(grp[c]);
      vk.col(c) = params.V.col(grp[c]);
    }
    for (int i : data.class_indices[k]) {
      const Vector out = vk * (wk.transpose() * data.points.col(i));  // no ReLU
      switch (params.loss_kind) {
        case LossKind::Exponential:
          total += std::exp(std::min(-binary_sign(k) * out[0], 700.0));
          break;
        case LossKind::Logistic: {
          const double zz = -binary_sign(k) * out[0];
          total += 2.0 * (zz > 0.0 ? zz + std::log1p(std::exp(-zz)) : std::log1p(std::exp(zz)));
          break;
        }
        case LossKind::CrossEntropy: {
          const double m = out.maxCoeff();
          total += m + std::log((out.array() - m).exp().sum()) - out[k];
          break;
        }
      }
    }
  }
  return total;
}

AlignmentResidualReport alignment_ode_residual(const NetParams& params,
                                               const Gradients& grads,
                                               const Dataset& data, double epsilon,
                                               double subgrad_at_zero) {
  const int h = params.width();
  const int n = data.n();
  const bool binary = params.loss_kind != LossKind::CrossEntropy;
  const int K = data.num_classes;

  double x_max = 0.0;
  for (int i = 0; i < n; ++i) x_max = std::max(x_max, data.points.col(i).norm());

  AlignmentResidualReport rep;
  rep.bound = 16.0 / std::sqrt(static_cast<double>(K)) * epsilon * n * x_max * x_max *
              std::sqrt(static_cast<double>(h));
  rep.neurons.resize(h);

  Matrix frame;
  if (!binary) frame = pseudo_label_frame(K);

  double max_w_nsq = 0.0;
  for (int j = 0; j < h; ++j) max_w_nsq = std::max(max_w_nsq, params.W.col(j).squaredNorm());
  rep.in_regime =
      epsilon > 0.0 && max_w_nsq <= epsilon / std::sqrt(static_cast<double>(h));

  for (int j = 0; j < h; ++j) {
    AlignmentResidualRow row;
    row.bound = rep.bound;
    const Vector wj = params.W.col(j);
    const Vector vj = params.V.col(j);
    const double wn = wj.norm();
    const double vn = vj.norm();
    if (wn == 0.0 || vn == 0.0) {
      row.undefined = true;
      row.residual_w = row.residual_v = std::numeric_limits<double>::quiet_NaN();
      rep.neurons[j] = row;
      continue;
    }
    const Vector w_hat = wj / wn;
    const Vector v_hat = vj / vn;

    // Exact angular derivative along the flow: proj_{w^perp}(-grad_w / ||w||).
    Vector exact_w = -grads.dW.col(j) / wn;
    exact_w -= w_hat.dot(exact_w) * w_hat;

    Vector approx_w = Vector::Zero(params.dim());
    Vector approx_v = Vector::Zero(params.out_dim());
    for (int i = 0; i < n; ++i) {
      const double z = wj.dot(data.points.col(i));
      double xi;
      if (z > 0.0) {
        xi = 1.0;
      } else if (z == 0.0) {
        xi = subgrad_at_zero;
        if (xi == 0.0) continue;
      } else {
        continue;
      }
      if (binary) {
        approx_w += xi * binary_sign(data.labels[i]) * data.points.col(i);
      } else {
        const auto e = frame.col(data.labels[i]);
        approx_w += xi * e.dot(v_hat) * data.points.col(i);
        approx_v += xi * data.points.col(i).dot(w_hat) * e;
      }
    }
    if (binary) {
      const double v = params.V(0, j);
      approx_w *= v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
    } else {
      const double c = std::sqrt((K - 1.0) / K);
      approx_w *= c;
      approx_v *= c;
    }
    approx_w -= w_hat.dot(approx_w) * w_hat;
    row.residual_w = (exact_w - approx_w).norm();

    if (binary) {
      row.residual_v = std::numeric_limits<double>::quiet_NaN();
      row.within_bound = row.residual_w <= rep.bound;
    } else {
      Vector exact_v = -grads.dV.col(j) / vn;
      exact_v -= v_hat.dot(exact_v) * v_hat;
      approx_v -= v_hat.dot(approx_v) * v_hat;
      row.residual_v = (exact_v - approx_v).norm();
      row.within_bound = row.residual_w <= rep.bound && row.residual_v <= rep.bound;
      rep.max_residual = std::max(rep.max_residual, row.residual_v);
    }
    rep.max_residual = std::max(rep.max_residual, row.residual_w);
    rep.neurons[j] = row;
  }
  return rep;
}

namespace {

DiagRow make_diag_row(long step, double time, double eta, double loss_value,
                      const NetParams& params, const Dataset& data,
                      const Gradients& grads, const FlowConfig& config,
                      const SeparationReport& sep) {
  const int h = params.width();
  const int K = data.num_classes;
  const bool binary = params.loss_kind != LossKind::CrossEntropy;

  DiagRow row;
  row.step = step;
  row.time = time;
  row.eta = eta;
  row.loss = loss_value;
  row.theta_fro = std::sqrt(params.W.squaredNorm() + params.V.squaredNorm());

  row.w_norm_sq.resize(h);
  row.v_norm_sq.resize(h);
  if (binary) row.v_sign.resize(h);
  row.cos_to_class_mean.assign(h, std::vector<double>(K, 0.0));
  row.active_counts.assign(h, std::vector<int>(K, 0));
  row.aggregate_alignment.assign(h, std::vector<double>(K, 0.0));
  if (!binary) row.pseudo_alignment.assign(h, std::vector<double>(K, 0.0));

  std::vector<Vector> class_means(K);
  for (int k = 0; k < K; ++k) class_means[k] = data.class_mean_direction(k);
  Matrix frame;
  if (!binary) frame = pseudo_label_frame(K);

  const Matrix z = params.W.transpose() * data.points;
  row.boundary_events = (z.array().abs() < 1e-12).count();
  for (int j = 0; j < h; ++j) {
    row.w_norm_sq[j] = params.W.col(j).squaredNorm();
    row.v_norm_sq[j] = params.V.col(j).squaredNorm();
    row.max_w_norm_sq = std::max(row.max_w_norm_sq, row.w_norm_sq[j]);
    row.max_balance_gap =
        std::max(row.max_balance_gap, std::abs(row.w_norm_sq[j] - row.v_norm_sq[j]));
    const double wn = std::sqrt(row.w_norm_sq[j]);
    if (binary) {
      const double v = params.V(0, j);
      row.v_sign[j] = v > 0.0 ? 1 : (v < 0.0 ? -1 : 0);
    }
    for (int k = 0; k < K; ++k) {
      if (wn > 0.0)
        row.cos_to_class_mean[j][k] = class_means[k].dot(params.W.col(j)) / wn;
      if (!binary) {
        const double vn = std::sqrt(row.v_norm_sq[j]);
        if (vn > 0.0)
          row.pseudo_alignment[j][k] = frame.col(k).dot(params.V.col(j)) / vn;
      }
    }
    for (int i = 0; i < data.n(); ++i) {
      if (z(j, i) > 0.0) {
        row.active_counts[j][data.labels[i]] += 1;
        if (wn > 0.0) row.aggregate_alignment[j][data.labels[i]] += z(j, i) / wn;
      }
    }
  }

  const Matrix feats = z.cwiseMax(0.0);
  const Matrix outputs = params.V * feats;
  for (int i = 0; i < data.n(); ++i) {
    row.max_feature_norm = std::max(row.max_feature_norm, feats.col(i).norm());
    row.max_output_norm = std::max(row.max_output_norm, outputs.col(i).norm());
  }

  row.separated = sep.separated;
  row.separation_violations = static_cast<long>(sep.violations.size());
  row.max_cross_gram = sep.max_cross_gram;
  row.loss_decomposition_gap =
      sep.separated ? std::abs(decomposed_loss(params, data, sep.aligned_groups) - loss_value)
                    : std::numeric_limits<double>::quiet_NaN();

  const AlignmentResidualReport ar =
      alignment_ode_residual(params, grads, data, config.epsilon, config.subgrad_at_zero);
  row.alignment_bound = ar.bound;
  row.in_regime = ar.in_regime;
  double rw = 0.0, rv = 0.0;
  for (const auto& nr : ar.neurons) {
    if (nr.undefined) continue;
    rw = std::max(rw, nr.residual_w);
    if (!binary) rv = std::max(rv, nr.residual_v);
  }
  row.alignment_residual_w = rw;
  row.alignment_residual_v = binary ? std::numeric_limits<double>::quiet_NaN() : rv;
  return row;
}

bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace

TrajectoryLog run_flow(const NetParams& start, const Dataset& data,
                       const FlowConfig& config, const std::vector<int>& partition) {
  check_model_data(start, data);
  if (static_cast<int>(partition.size()) != start.width())
    throw ConfigError("partition size does not match width");
  if (config.step_mode == StepModeKind::Fixed && config.eta <= 0.0)
    throw ConfigError("fixed step size must be positive");
  if (config.step_mode == StepModeKind::LossAdaptive &&
      (config.eta_base <= 0.0 || config.eta_cap <= 0.0))
    throw ConfigError("adaptive step parameters must be positive");
  if (config.log_every < 1) throw ConfigError("log_every must be >= 1");

  TrajectoryLog log;
  log.initial = start;
  log.partition = partition;

  NetParams params = start;
  double time = 0.0;
  long next_log = 0;
  double log_gap = config.log_every;
  const auto wall_start = std::chrono::steady_clock::now();

  // Directional-stationarity history: normalized snapshots at log points.
  struct DirSnap {
    double time;
    Matrix w, v;
  };
  std::deque<DirSnap> history;

  bool stopping = false;
  StopReason reason = StopReason::MaxSteps;
  long step = 0;
  for (;; ++step) {
    double loss_value = loss(params, data);
    Gradients grads = gradients(params, data, config.subgrad_at_zero);

    const bool finite =
        std::isfinite(loss_value) && all_finite(grads.dW) && all_finite(grads.dV);
    if (!finite) {
      // Revert to the last logged snapshot; the row list already describes it.
      reason = StopReason::NonFinite;
      if (!log.rows.empty()) params = log.final_params;
      stopping = true;
    }

    double eta = 0.0;
    if (!stopping) {
      eta = config.step_mode == StepModeKind::Fixed
                ? config.eta
                : std::min(config.eta_cap, config.eta_base / std::max(loss_value, 1e-300));
    }

    const bool log_now = stopping || step >= next_log || step >= config.max_steps;
    if (log_now && !stopping) {
      const SeparationReport sep = detect_separation(params, data, partition);
      log.rows.push_back(
          make_diag_row(step, time, eta, loss_value, params, data, grads, config, sep));
      log.final_params = params;  // last logged state

      if (sep.separated && !log.tstar_step.has_value()) {
        log.tstar_step = step;
        log.tstar_time = time;
        log.at_separation = params;
      } else if (!sep.separated && log.tstar_step.has_value() &&
                 !log.separation_reverted) {
        // A later violation invalidates the run; report, do not hide.
        log.separation_reverted = true;
        log.reverted_step = step;
      }

      if (log.tstar_step.has_value()) {
        log_gap = std::max(log_gap * config.geometric_log_factor,
                           static_cast<double>(config.log_every));
      }
      next_log = step + std::max<long>(1, static_cast<long>(log_gap));

      // Stop checks that only need log-point resolution.
      if (config.stationarity_tol > 0.0 && config.stationarity_window > 0.0) {
        const double fro = log.rows.back().theta_fro;
        if (fro > 0.0) {
          DirSnap snap{time, params.W / fro, params.V / fro};
          const DirSnap* ref = nullptr;
          for (const auto& s : history) {
            if (s.time <= time - config.stationarity_window) ref = &s;
          }
          if (ref != nullptr) {
            const double delta = std::sqrt((snap.w - ref->w).squaredNorm() +
                                           (snap.v - ref->v).squaredNorm());
            if (delta < config.stationarity_tol) {
              reason = StopReason::DirectionalStationarity;
              stopping = true;
            }
          }
          history.push_back(std::move(snap));
          while (history.size() > 2 &&
                 history[1].time <= time - config.stationarity_window) {
            history.pop_front();
          }
        }
      }
    }

    if (!stopping && config.stop_loss > 0.0 && loss_value <= config.stop_loss) {
      reason = StopReason::LossThreshold;
      stopping = true;
    }
    if (!stopping && step >= config.max_steps) {
      reason = StopReason::MaxSteps;
      stopping = true;
    }
    if (!stopping && config.max_wall_seconds > 0.0) {
      const double elapsed =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start)
              .count();
      if (elapsed > config.max_wall_seconds) {
        reason = StopReason::WallTime;
        stopping = true;
      }
    }

    if (stopping) {
      if (!log_now && reason != StopReason::NonFinite) {
        const SeparationReport sep = detect_separation(params, data, partition);
        log.rows.push_back(
            make_diag_row(step, time, eta, loss_value, params, data, grads, config, sep));
      }
      log.final_params = params;
      log.stop_reason = reason;
      log.steps = step;
      log.integrated_time = time;
      return log;
    }

    params.W -= eta * grads.dW;
    params.V -= eta * grads.dV;
    time += eta;
  }
}

EnvelopeReport small_norm_envelope_check(const TrajectoryLog& log, double epsilon,
                                         const Dataset& data) {
  EnvelopeReport rep;
  double x_max = 0.0;
  for (int i = 0; i < data.n(); ++i) x_max = std::max(x_max, data.points.col(i).norm());
  const double h = static_cast<double>(log.initial.width());
  rep.window = 1.0 / (4.0 * data.n() * x_max) * std::log(1.0 / (std::sqrt(h) * epsilon));
  rep.w_bound = epsilon / std::sqrt(h);
  rep.f_bound = 2.0 * epsilon * x_max * std::sqrt(h);

  for (const DiagRow& row : log.rows) {
    if (row.time > rep.window) {
      rep.covered = true;
      break;
    }
    ++rep.rows_checked;
    rep.max_w_norm_sq = std::max(rep.max_w_norm_sq, row.max_w_norm_sq);
    rep.max_output_norm = std::max(rep.max_output_norm, row.max_output_norm);
  }
  if (!log.rows.empty() && log.rows.back().time >= rep.window) rep.covered = true;
  rep.w_margin = rep.w_bound - rep.max_w_norm_sq;
  rep.f_margin = rep.f_bound - rep.max_output_norm;
  rep.holds = rep.rows_checked > 0 && rep.w_margin >= 0.0 && rep.f_margin >= 0.0;
  return rep;
}

NetParams run_sgd(const NetParams& start, const Dataset& data, const SgdConfig& config,
                  const std::function<void(int, const NetParams&)>& on_epoch) {
  check_model_data(start, data);
  if (config.batch < 1 || config.epochs < 1 || config.lr <= 0.0)
    throw ConfigError("bad SGD configuration");
  NetParams params = start;
  Rng rng(config.seed);
  std::vector<int> order(data.n());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    rng.shuffle(order);
    for (int lo = 0; lo < data.n(); lo += config.batch) {
      const int hi = std::min<int>(lo + config.batch, data.n());
      const std::vector<int> batch(order.begin() + lo, order.begin() + hi);
      const Gradients g = gradients_subset(params, data, batch, 0.0, true);
      params.W -= config.lr * g.dW;
      params.V -= config.lr * g.dV;
    }
    if (on_epoch) on_epoch(epoch, params);
  }
  return params;
}

}  // namespace ncflow
