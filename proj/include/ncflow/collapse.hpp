#pragma once

#include <optional>
#include <vector>

#include "ncflow/dataset.hpp"
#include "ncflow/margins.hpp"
#include "ncflow/model.hpp"
#include "ncflow/types.hpp"

namespace ncflow {

struct NCMetrics {
  std::optional<double> nc1;  // intra-class / inter-class variance ratio
  std::optional<double> nc2;  // Gram of unit class means vs identity
  std::optional<double> nc3;  // classifier vs pseudo-label frame (needs d_y == K)
};

/// NC metrics over per-sample features (one column per sample). NC1 is
/// undefined when the inter-class variance vanishes; NC2 when a class mean is
/// zero; NC3 when the classifier is not K-row. The pseudo-inverse in NC3
/// truncates singular values below 1e-10 * sigma_max.
NCMetrics nc_metrics(const Matrix& features, const std::vector<int>& labels,
                     int num_classes, const Matrix& classifier);

struct ClassCollapse {
  int cls = 0;
  int samples = 0;
  bool vacuous = false;         // all features of the class are zero
  double sigma1 = 0.0;
  double sigma2 = 0.0;
  double rank1_residual = 0.0;  // sigma2 / sigma1
  Vector mean_direction;        // unit phi-bar_k (top left singular vector)
  double min_mean_entry = 0.0;
  double collapse_residual = 0.0;  // max_i ||phi_i - <s_k u_k, x_i> phi-bar|| / ||phi_i||
  double scale_residual = 0.0;     // max_i | ||phi_i|| - <s_k u_k, x_i> | / ||phi_i||
  double w_fro = 0.0;              // ||W_k||_F, predicted s_k
  double v_fro = 0.0;              // ||V_k||_F, predicted s_k
  double w_dir_cos_u = 0.0;        // cos(data-space top singular vector of W_k, u_k)
  double v_mean_cos = 0.0;  // CE: cos(mean v_j, pseudo-label); binary: 1 if group signs agree
};

struct CollapseReport {
  NCMetrics nc;
  std::vector<ClassCollapse> classes;
  double orthogonality = 0.0;      // max_{k != k'} | <phi-bar_k, phi-bar_k'> |
  double min_mean_entry = 0.0;     // min over classes of the min phi-bar entry
  double duality_residual = 0.0;   // || V - predicted ||_F / ||V||_F
  double max_rank1_residual = 0.0;
  double max_collapse_residual = 0.0;
  double max_scale_rel_error = 0.0;  // max_k | ||V_k||_F - s_k | / s_k (and W side)
  double min_w_dir_cos = 0.0;
  double min_v_mean_cos = 0.0;
};

/// Certifies the limit characterization on a normalized direction: intra-class
/// directional collapse, orthogonal nonnegative class means, projected
/// self-duality, and the per-class norm scales, against the independently
/// computed margin certificate. Neurons are grouped by `partition` (entries
/// < 0 excluded). Classes whose features are all zero are flagged vacuous.
CollapseReport limit_residuals(const NetParams& direction, const Dataset& data,
                               const std::vector<int>& partition,
                               const MarginCertificate& cert);

struct PcaSummary {
  Vector explained;   // top_r singular-value energy ratios (padded with zeros)
  Matrix components;  // feature-space directions, one per column
  Matrix coords;      // top_r x n projected coordinates
};

/// Raw (uncentered) SVD energy summary of a feature matrix; each component is
/// sign-fixed so its largest-magnitude entry is positive.
PcaSummary feature_pca_summary(const Matrix& features, int top_r);

}  // namespace ncflow
