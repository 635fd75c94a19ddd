#pragma once

#include <vector>

#include "ncflow/dataset.hpp"
#include "ncflow/model.hpp"
#include "ncflow/types.hpp"

namespace ncflow {

struct MarginSolution {
  double gamma = 0.0;       // max-margin value for the class
  Vector u;                 // unit max-margin direction
  double gap = 0.0;         // ||p|| - min_i <x_i, p/||p||> at termination
  Vector support_weights;   // convex coefficients reproducing p = X * lambda
  long iterations = 0;
};

/// Class-wise max margin gamma = max_{||u||=1} min_i <x_i, u> via the
/// minimum-norm point of the convex hull of `points` (one column per point).
/// For pairwise positively correlated points gamma = ||p|| and u = p/||p||.
/// Pairwise Frank-Wolfe with away steps on the Gram matrix, lowest-index
/// tie-breaking, terminated at duality gap <= tol. Throws DataError when the
/// hull's minimum norm collapses toward zero (non-positive margin) and
/// VerificationError if the gap tolerance is not reached.
MarginSolution class_max_margin(const Matrix& points, double tol = 1e-9,
                                long max_iterations = 2000000);

/// s_k = sqrt(gamma_k^{-1} / (2 sum_k' gamma_k'^{-1})). All gammas must be
/// positive.
Vector margin_scales(const Vector& gammas);

struct MarginCertificate {
  std::vector<MarginSolution> per_class;
  Vector gammas;
  Vector s;
  double tol = 1e-9;
};

MarginCertificate compute_margin_certificate(const Dataset& data, double tol = 1e-9);

struct KktClassReport {
  int cls = 0;
  double min_margin_raw = 0.0;        // before rescaling
  int feasibility_violations = 0;     // margins below 1 (after rescaling, if any)
  double max_feasibility_violation = 0.0;
  double stationarity_residual = 0.0;  // || 2 theta_k - sum lambda grad(c) ||_F
  double comp_slack_max = 0.0;         // max_i lambda_i * slack_i
  int active_constraints = 0;          // lambda entries above 1e-12
};

struct KktReport {
  bool rescaled = false;       // min margin was positive, direction scaled to margin 1
  double rescale = 1.0;        // multiplier applied to W and V
  double min_margin_raw = 0.0;
  std::vector<KktClassReport> classes;
  double stationarity_max = 0.0;
  int feasibility_violations_total = 0;
  double max_feasibility_violation = 0.0;
};

/// Scored KKT diagnostic for the per-class margin problems
///   min ||W_k||_F^2 + ||V_k||_F^2  s.t. margins over class-k samples >= 1
/// evaluated at a normalized direction whose neurons are grouped by
/// `partition` (entries < 0 are excluded). The direction is rescaled so the
/// smallest margin is active at 1 (when positive), multipliers come from a
/// nonnegative least-squares fit, and stationarity / complementary-slackness
/// residuals are reported per class. Binary directions use the sign-group
/// constraints y_i * (V_g W_g^T x_i) >= 1.
KktReport kkt_residual(const NetParams& direction, const Dataset& data,
                       const std::vector<int>& partition);

/// Nonnegative least squares min ||A x - b|| s.t. x >= 0 (Lawson-Hanson).
Vector nnls(const Matrix& a, const Vector& b, double tol = 1e-12);

}  // namespace ncflow
