#pragma once

#include <string>
#include <vector>

#include "ncflow/dataset.hpp"
#include "ncflow/types.hpp"

namespace ncflow {

enum class LossKind { Exponential, Logistic, CrossEntropy };

std::string loss_kind_name(LossKind kind);
LossKind loss_kind_from_name(const std::string& name);

/// Two-layer ReLU network f(x) = V relu(W^T x). Bias-free; binary losses use
/// a scalar output with +-1 labels (class 0 -> +1), cross-entropy uses a
/// K-dimensional output with one-hot labels.
struct NetParams {
  Matrix W;  // D x h, columns are input neuron weights
  Matrix V;  // d_y x h, columns are output neuron weights
  LossKind loss_kind = LossKind::CrossEntropy;

  int dim() const { return static_cast<int>(W.rows()); }
  int width() const { return static_cast<int>(W.cols()); }
  int out_dim() const { return static_cast<int>(V.rows()); }
};

/// Checks the loss/label convention against a dataset: scalar output and
/// K == 2 for the binary losses, out_dim == K >= 2 for cross-entropy, and
/// width >= K. Throws ConfigError on mismatch.
void check_model_data(const NetParams& params, const Dataset& data);

struct ForwardResult {
  Vector feature;  // relu(W^T x), length h
  Vector output;   // V * feature, length d_y
};

ForwardResult forward(const NetParams& params, const Vector& x);

/// Last-layer features for every sample, one column per sample (h x n).
Matrix features_all(const NetParams& params, const Matrix& points);

/// Total loss L = sum_i l(y_i, f(x_i)). Cross-entropy goes through a
/// max-shifted log-sum-exp; the exponential loss clamps its exponent at 700
/// here (reporting only - gradients never clamp).
double loss(const NetParams& params, const Dataset& data);

/// Loss restricted to a subset of sample indices; divide_by_count selects the
/// batch-mean convention used by the SGD replication mode.
double loss_subset(const NetParams& params, const Dataset& data,
                   const std::vector<int>& indices, bool divide_by_count = false);

struct Gradients {
  Matrix dW;  // D x h
  Matrix dV;  // d_y x h
};

/// Exact (sub)gradients of the total loss. `subgrad_at_zero` is the ReLU
/// subgradient value used where <x_i, w_j> == 0 exactly.
Gradients gradients(const NetParams& params, const Dataset& data,
                    double subgrad_at_zero = 0.0);

Gradients gradients_subset(const NetParams& params, const Dataset& data,
                           const std::vector<int>& indices,
                           double subgrad_at_zero = 0.0,
                           bool divide_by_count = false);

Vector softmax(const Vector& z);

struct SoftmaxBoundRow {
  int index = 0;
  double f_norm = 0.0;
  double lhs = 0.0;  // || softmax(f) - 1/K ||
  double rhs = 0.0;  // (8 / sqrt(K)) * ||f||
  bool holds = false;
  bool skipped = false;  // ||f|| > 1/4
};

/// Per-sample check of the softmax deviation bound; samples with
/// ||f(x_i)|| > 1/4 are reported as skipped.
std::vector<SoftmaxBoundRow> softmax_deviation_bound_check(const NetParams& params,
                                                           const Dataset& data);

/// The K x K pseudo-label frame sqrt(K/(K-1)) (I - 11^T / K); column k is the
/// pseudo-label of class k. Requires K >= 2.
Matrix pseudo_label_frame(int num_classes);

}  // namespace ncflow
