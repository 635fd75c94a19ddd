#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ncflow/types.hpp"

namespace ncflow {

/// A classification dataset. Points are stored one per column; labels are
/// consecutive class indices in [0, num_classes). Immutable by convention
/// once built through make_dataset.
struct Dataset {
  Matrix points;                                 // D x n
  std::vector<int> labels;                       // size n
  int num_classes = 0;                           // K
  std::vector<std::vector<int>> class_indices;   // K sets partitioning [0, n)
  std::vector<int> source_labels;                // size K; original identity of class k

  int n() const { return static_cast<int>(points.cols()); }
  int dim() const { return static_cast<int>(points.rows()); }

  /// Unit direction of the class sum (the class average direction).
  Vector class_mean_direction(int k) const;
};

/// Binary label convention used throughout: class 0 carries sign +1, class 1
/// carries sign -1.
inline double binary_sign(int label) { return label == 0 ? 1.0 : -1.0; }

/// Builds a Dataset and checks its invariants: labels in range, every class
/// non-empty, no zero-norm point. Throws DataError otherwise.
Dataset make_dataset(Matrix points, std::vector<int> labels,
                     std::vector<int> source_labels = {});

struct SeparabilityCertificate {
  double mu_s = 0.0;    // min same-class normalized correlation (includes i == j)
  double mu_d = 0.0;    // minus the max cross-class normalized correlation
  double x_min = 0.0;
  double x_max = 0.0;
  double strict_ratio = 0.0;  // x_max^2 / (x_min^2 * mu_d * mu_s^2); NaN if not separable
  bool is_orthogonally_separable = false;
  bool satisfies_strict_condition = false;  // strict_ratio < 2K - 3; meaningful for K > 2
  // Violation accounting so real data can be reported instead of rejected.
  std::int64_t same_pairs = 0;
  std::int64_t cross_pairs = 0;
  std::int64_t same_violations = 0;   // same-class pairs with correlation <= tol
  std::int64_t cross_violations = 0;  // cross-class pairs with correlation >= -tol
  double tolerance = 1e-12;
};

/// Exact O(n^2 D) pairwise scan for the separability constants. Correlations
/// within `tol` of zero count as violations. Throws DataError naming the
/// offending point if some point has zero norm; requires K >= 2.
SeparabilityCertificate validate_separability(const Dataset& data, double tol = 1e-12);

struct GenerateConfig {
  int num_classes = 2;
  int dim = 2;
  int points_per_class = 1;
  double cone_half_angle = 0.0;  // radians
  double norm_lo = 1.0;
  double norm_hi = 1.0;
  std::uint64_t seed = 0;
  int max_attempts = 64;
};

/// Samples points in cones around K simplex-frame anchor directions
/// (pairwise anchor correlation -1/(K-1)). Regenerates up to max_attempts
/// times until the result certifies as separable; throws DataError with the
/// achieved (mu_s, mu_d) if it never does. Deterministic given seed.
Dataset generate_separable(const GenerateConfig& config);

struct CenterResult {
  Dataset data;
  int dropped_points = 0;  // points that became exactly zero after centering
};

/// Subtracts the global mean from every point. Labels are unchanged; points
/// that land exactly on zero are dropped and counted.
CenterResult center_dataset(const Dataset& data);

/// Appends a homogeneous coordinate 1 to every point (bias support lives in
/// the data layer; the network itself is bias-free).
Dataset augment_bias(const Dataset& data);

/// Reads an IDX image/label file pair. Keeps only `keep_classes` (at most
/// max_per_class each, 0 = unlimited), relabels them to 0..K-1 in the order
/// given, stores the original digits in source_labels, and scales pixels to
/// [0, 1]. Throws DataError on magic mismatch, truncation, or count mismatch.
Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 const std::vector<int>& keep_classes, int max_per_class = 0);

/// CSV exchange format: one row per point, D floats then the integer label.
void save_csv(const Dataset& data, const std::string& path);
Dataset load_csv(const std::string& path);

}  // namespace ncflow
