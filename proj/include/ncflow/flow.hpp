#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ncflow/dataset.hpp"
#include "ncflow/model.hpp"
#include "ncflow/types.hpp"

namespace ncflow {

enum class StepModeKind { Fixed, LossAdaptive };

enum class StopReason {
  LossThreshold,
  DirectionalStationarity,
  MaxSteps,
  WallTime,
  NonFinite,
};

std::string stop_reason_name(StopReason reason);

struct FlowConfig {
  StepModeKind step_mode = StepModeKind::LossAdaptive;
  double eta = 1e-3;        // Fixed step size
  double eta_base = 1e-2;   // LossAdaptive: eta_t = min(cap, eta_base / loss)
  double eta_cap = 1e6;
  long max_steps = 200000;
  int log_every = 10;
  // After separation fires, log points spread geometrically to keep long late
  // phases compact.
  double geometric_log_factor = 1.25;
  double stop_loss = 0.0;              // stop when loss <= this (0 = disabled)
  double stationarity_tol = 0.0;       // ||dir(t) - dir(t - window)||_F below tol
  double stationarity_window = 0.0;    // in integrated time
  double max_wall_seconds = 0.0;       // 0 = disabled (wall stop breaks determinism)
  double subgrad_at_zero = 0.0;
  double epsilon = 0.0;  // init scale, for small-norm regime diagnostics
};

enum class NeuronRole { Aligned, Dead, Violating };

struct SeparationReport {
  bool separated = false;
  std::vector<std::pair<int, int>> violations;       // (neuron, sample)
  std::vector<NeuronRole> roles;                     // per neuron
  std::vector<std::vector<int>> aligned_groups;      // class -> neurons (the N~_k)
  double max_cross_gram = 0.0;  // max_{k != k'} max <phi(x_i), phi(x_i')>
};

/// Evaluates the separation sign pattern exactly: a neuron assigned class k
/// must activate every class-k point and no other point; a neuron that
/// activates nothing is dead (allowed). Separated means no violations and a
/// non-empty aligned group per class. Partition entries < 0 must be dead.
SeparationReport detect_separation(const NetParams& params, const Dataset& data,
                                   const std::vector<int>& partition);

/// Binary neuron grouping from output signs: v_j > 0 -> class 0, v_j < 0 ->
/// class 1, exact zero -> unassigned (-1).
std::vector<int> sign_partition(const NetParams& params);

/// Loss recomputed through the per-class linear decomposition
/// sum_k sum_{i in I_k} l(y_i, V_k W_k^T x_i) over the aligned groups.
double decomposed_loss(const NetParams& params, const Dataset& data,
                       const std::vector<std::vector<int>>& aligned_groups);

struct AlignmentResidualRow {
  double residual_w = 0.0;  // || exact angular derivative - approximation ||
  double residual_v = 0.0;  // multi-class only (NaN for binary)
  double bound = 0.0;       // (16/sqrt(K)) eps n X_max^2 sqrt(h)
  bool within_bound = false;
  bool undefined = false;   // zero-norm neuron
};

struct AlignmentResidualReport {
  std::vector<AlignmentResidualRow> neurons;
  bool in_regime = false;  // max_j ||w_j||^2 <= eps / sqrt(h)
  double bound = 0.0;
  double max_residual = 0.0;
};

/// Compares the exact angular derivative (from the exact gradient) against
/// the early-phase approximation of the alignment dynamics, per neuron.
/// `grads` must be the gradients of the loss at `params`.
AlignmentResidualReport alignment_ode_residual(const NetParams& params,
                                               const Gradients& grads,
                                               const Dataset& data, double epsilon,
                                               double subgrad_at_zero = 0.0);

struct DiagRow {
  long step = 0;
  double time = 0.0;  // integrated time (sum of eta)
  double eta = 0.0;
  double loss = 0.0;
  double theta_fro = 0.0;
  double max_w_norm_sq = 0.0;
  double max_balance_gap = 0.0;   // max_j | ||w_j||^2 - ||v_j||^2 |
  double max_feature_norm = 0.0;  // max_i ||phi(x_i)||
  double max_output_norm = 0.0;   // max_i ||f(x_i)||
  bool separated = false;
  long separation_violations = 0;
  double max_cross_gram = 0.0;
  double loss_decomposition_gap = 0.0;  // |decomposed - full| once separated, else NaN
  long boundary_events = 0;             // pairs with |<x_i, w_j>| < 1e-12
  double alignment_residual_w = 0.0;    // max over neurons
  double alignment_residual_v = 0.0;
  double alignment_bound = 0.0;
  bool in_regime = false;
  // Per-neuron detail.
  std::vector<double> w_norm_sq;
  std::vector<double> v_norm_sq;
  std::vector<int> v_sign;                    // binary only, else empty
  std::vector<std::vector<double>> cos_to_class_mean;  // [neuron][class]
  std::vector<std::vector<int>> active_counts;         // [neuron][class]
  std::vector<std::vector<double>> aggregate_alignment; // A_k^{w_j}
  std::vector<std::vector<double>> pseudo_alignment;    // B_k^{v_j}, CE only
};

struct TrajectoryLog {
  std::vector<DiagRow> rows;
  NetParams initial;
  NetParams final_params;
  std::optional<NetParams> at_separation;
  std::optional<long> tstar_step;
  std::optional<double> tstar_time;
  bool separation_reverted = false;
  long reverted_step = -1;
  StopReason stop_reason = StopReason::MaxSteps;
  long steps = 0;
  double integrated_time = 0.0;
  std::vector<int> partition;  // grouping used for separation checks
};

/// Explicit-Euler discretization of the gradient flow. Logs diagnostics on
/// the logging schedule, records the first step where the separation pattern
/// holds (and whether it ever reverts), and stops on the first satisfied stop
/// criterion. Deterministic given its inputs.
TrajectoryLog run_flow(const NetParams& start, const Dataset& data,
                       const FlowConfig& config, const std::vector<int>& partition);

struct EnvelopeReport {
  double window = 0.0;  // T = (1/(4 n X_max)) log(1/(sqrt(h) eps))
  bool covered = false; // log reaches the window in integrated time
  bool holds = false;
  double max_w_norm_sq = 0.0;
  double w_bound = 0.0;  // eps / sqrt(h)
  double w_margin = 0.0;
  double max_output_norm = 0.0;
  double f_bound = 0.0;  // 2 eps X_max sqrt(h)
  double f_margin = 0.0;
  long rows_checked = 0;
};

/// Verifies the small-norm envelope over all logged steps inside the window.
EnvelopeReport small_norm_envelope_check(const TrajectoryLog& log, double epsilon,
                                         const Dataset& data);

struct SgdConfig {
  int batch = 1000;
  int epochs = 50;
  double lr = 0.1;
  std::uint64_t seed = 0;
};

/// Minibatch SGD with batch-mean gradients and per-epoch reshuffling. This is
/// the approximate replication mode for real-data experiments, not a
/// correctness surface. The callback runs after every epoch.
NetParams run_sgd(const NetParams& start, const Dataset& data, const SgdConfig& config,
                  const std::function<void(int epoch, const NetParams&)>& on_epoch = {});

}  // namespace ncflow
