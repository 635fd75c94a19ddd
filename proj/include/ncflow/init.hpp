#pragma once

#include <cstdint>
#include <vector>

#include "ncflow/dataset.hpp"
#include "ncflow/model.hpp"
#include "ncflow/types.hpp"

namespace ncflow {

/// An initialization shape: per-neuron pairs (w_j0, v_j0) with equal norms,
/// plus the scale epsilon. The materialized start point is epsilon * shape.
struct InitShape {
  Matrix w_shapes;  // D x h
  Matrix v_shapes;  // d_y x h
  double epsilon = 0.0;

  int dim() const { return static_cast<int>(w_shapes.rows()); }
  int width() const { return static_cast<int>(w_shapes.cols()); }
  int out_dim() const { return static_cast<int>(v_shapes.rows()); }
};

/// Default scale 1e-4 / sqrt(h), far inside the small-norm envelope.
double default_epsilon(int width);

/// I.i.d. standard normal shapes with each v_j0 rescaled to match ||w_j0||.
/// Deterministic given seed.
InitShape random_balanced(int dim, int out_dim, int width, double epsilon,
                          std::uint64_t seed);

NetParams materialize(const InitShape& shape, LossKind loss_kind);

/// Checks ||w_j0|| == ||v_j0|| (to 1e-12) and that no shape vector is zero.
void check_shape_invariants(const InitShape& shape);

struct NonDegenerateReport {
  bool satisfied = false;
  std::vector<int> zero_v_indices;  // v_j0 == 0: sign undefined, fails
  int n_plus = 0;                   // |{j : v_j0 > 0}|
  int n_minus = 0;
  double activation_plus = 0.0;   // max_{i in I_+, j in N_+} <x_i, w_j0>
  double activation_minus = 0.0;  // the (-) analogue
  // Largest cosine between a group's input shapes and the *opposite* class
  // average direction; must be strictly below 1.
  double repeller_plus_cos = 0.0;   // max_{j in N_+} cos(w_j0, xbar_-)
  double repeller_minus_cos = 0.0;  // max_{j in N_-} cos(w_j0, xbar_+)
  double repeller_slack = 0.0;      // min over both groups of (1 - cos)
};

/// Non-degeneracy check for binary shapes (scalar output, K == 2): both sign
/// groups non-empty, at least one activated pair per group, and strict
/// misalignment from the repelling class average. Alignment within 1e-12 of
/// the repeller counts as failure.
NonDegenerateReport check_non_degenerate(const InitShape& shape, const Dataset& data);

struct SemiLocalNeuron {
  int neuron = 0;
  int cls = 0;
  std::vector<int> active_counts;  // |I_k^{w_j0}| per class
  std::vector<double> aggregate;   // A_k^{w_j0} per class
  double count_slack = 0.0;        // |I_k|^2 - sum_{k' != k} |I_{k'}|^2
  double aggregate_slack = 0.0;    // A_k - 2 sum_{k' != k} A_{k'}
  double pseudo_alignment = 0.0;   // B_k^{v_j0}
  double pseudo_slack = 0.0;       // B_k - (1 - 1/(2(K-1)))
  bool ok = false;
};

struct SemiLocalReport {
  std::vector<SemiLocalNeuron> neurons;
  std::vector<int> partition;
  bool all_satisfied = false;
};

/// Semi-local initialization check for K > 2 shapes against a caller-supplied
/// neuron partition. Throws DataError if the partition does not cover [0, h)
/// with classes in range.
SemiLocalReport check_semi_local(const InitShape& shape, const Dataset& data,
                                 const std::vector<int>& partition);

struct SeededShapes {
  InitShape shape;
  std::vector<int> partition;  // neuron j -> class
};

/// Shapes drawn from (data direction, pseudo-label) pairs: neuron j gets
/// (x_i/||x_i||, e~_{label(i)}) for a random sample i. The first K draws are
/// stratified so every class receives a neuron. Requires width >= K.
SeededShapes data_seeded_shapes(const Dataset& data, int width, double epsilon,
                                std::uint64_t seed);

}  // namespace ncflow
