#include "ncflow/margins.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ncflow {

MarginSolution class_max_margin(const Matrix& points, double tol, long max_iterations) {
  const int m = static_cast<int>(points.cols());
  if (m == 0) throw DataError("max margin of an empty point set");

  const Matrix gram = points.transpose() * points;  // m x m

  // lambda: convex weights; d = G lambda = <x_i, p>; pnsq = lambda' d = ||p||^2.
  Vector lambda = Vector::Zero(m);
  int start = 0;
  for (int i = 1; i < m; ++i) {
    if (gram(i, i) < gram(start, start)) start = i;
  }
  lambda[start] = 1.0;
  Vector d = gram.col(start);

  MarginSolution sol;
  long it = 0;
  Vector p;
  double pn = 0.0;
  for (;;) {
    // Incremental pairwise steps on the Gram matrix until the (possibly
    // drifted) gap estimate clears the tolerance.
    for (; it < max_iterations; ++it) {
      const double pnsq = lambda.dot(d);
      if (pnsq <= 1e-24)
        throw DataError("non-positive margin: minimum-norm point collapsed to zero "
                        "(class points are not pairwise positively correlated)");
      const double norm = std::sqrt(pnsq);

      // Frank-Wolfe vertex (toward) and away vertex, lowest index wins ties.
      int s = 0;
      for (int i = 1; i < m; ++i) {
        if (d[i] < d[s]) s = i;
      }
      if (norm - d[s] / norm <= tol) break;

      int a = -1;
      for (int i = 0; i < m; ++i) {
        if (lambda[i] > 0.0 && (a < 0 || d[i] > d[a])) a = i;
      }

      // Pairwise step: shift weight from the away vertex onto the FW vertex.
      const double denom = gram(s, s) - 2.0 * gram(s, a) + gram(a, a);
      double t = lambda[a];
      if (denom > 0.0) t = std::min(lambda[a], (d[a] - d[s]) / denom);
      if (t <= 0.0) t = lambda[a];  // degenerate geometry: drop the away vertex
      lambda[s] += t;
      lambda[a] -= t;
      if (lambda[a] < 1e-18) lambda[a] = 0.0;
      d += t * (gram.col(s) - gram.col(a));

      if ((it + 1) % 1024 == 0) d = gram * lambda;  // kill incremental drift
    }

    // Exact recomputation at the current weights; iterate further if the
    // incremental estimate had drifted past the tolerance.
    p = points * lambda;
    pn = p.norm();
    if (pn <= 1e-12)
      throw DataError("non-positive margin: minimum-norm point collapsed to zero");
    double dmin = std::numeric_limits<double>::infinity();
    for (int i = 0; i < m; ++i) dmin = std::min(dmin, points.col(i).dot(p) / pn);
    sol.gap = pn - dmin;
    if (sol.gap <= tol) break;
    if (it >= max_iterations)
      throw VerificationError("margin solver did not reach the gap tolerance");
    d = gram * lambda;
  }
  sol.gamma = pn;
  sol.u = p / pn;
  sol.support_weights = lambda;
  sol.iterations = it;
  return sol;
}

Vector margin_scales(const Vector& gammas) {
  const int k = static_cast<int>(gammas.size());
  double inv_sum = 0.0;
  for (int i = 0; i < k; ++i) {
    if (gammas[i] <= 0.0) throw DataError("margin scales need all gammas > 0");
    inv_sum += 1.0 / gammas[i];
  }
  Vector s(k);
  for (int i = 0; i < k; ++i) s[i] = std::sqrt((1.0 / gammas[i]) / (2.0 * inv_sum));
  return s;
}

MarginCertificate compute_margin_certificate(const Dataset& data, double tol) {
  MarginCertificate cert;
  cert.tol = tol;
  cert.gammas = Vector(data.num_classes);
  for (int k = 0; k < data.num_classes; ++k) {
    const auto& idx = data.class_indices[k];
    Matrix pts(data.dim(), idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) pts.col(i) = data.points.col(idx[i]);
    cert.per_class.push_back(class_max_margin(pts, tol));
    cert.gammas[k] = cert.per_class.back().gamma;
  }
  cert.s = margin_scales(cert.gammas);
  return cert;
}

Vector nnls(const Matrix& a, const Vector& b, double tol) {
  const int nvar = static_cast<int>(a.cols());
  Vector x = Vector::Zero(nvar);
  std::vector<bool> passive(nvar, false);
  Vector resid = b;
  const double scale = std::max(1.0, b.norm());

  for (int outer = 0; outer < 4 * nvar + 16; ++outer) {
    // Most-violated dual coordinate among the active (zero) set.
    Vector w = a.transpose() * resid;
    int best = -1;
    for (int i = 0; i < nvar; ++i) {
      if (!passive[i] && (best < 0 || w[i] > w[best])) best = i;
    }
    if (best < 0 || w[best] <= tol * scale) break;
    passive[best] = true;

    for (int inner = 0; inner < 4 * nvar + 16; ++inner) {
      std::vector<int> pidx;
      for (int i = 0; i < nvar; ++i) {
        if (passive[i]) pidx.push_back(i);
      }
      Matrix ap(a.rows(), pidx.size());
      for (std::size_t c = 0; c < pidx.size(); ++c) ap.col(c) = a.col(pidx[c]);
      Vector xp = ap.colPivHouseholderQr().solve(b);

      bool feasible = true;
      for (int i = 0; i < xp.size(); ++i) {
        if (xp[i] <= 0.0) feasible = false;
      }
      if (feasible) {
        x.setZero();
        for (std::size_t c = 0; c < pidx.size(); ++c) x[pidx[c]] = xp[c];
        break;
      }
      // Step back to the boundary and drop the binding variables.
      double alpha = 1.0;
      for (std::size_t c = 0; c < pidx.size(); ++c) {
        const double xi = x[pidx[c]];
        if (xp[c] <= 0.0 && xi - xp[c] > 0.0) alpha = std::min(alpha, xi / (xi - xp[c]));
      }
      for (std::size_t c = 0; c < pidx.size(); ++c) {
        x[pidx[c]] += alpha * (xp[c] - x[pidx[c]]);
        if (x[pidx[c]] <= tol) {
          x[pidx[c]] = 0.0;
          passive[pidx[c]] = false;
        }
      }
    }
    resid = b - a * x;
  }
  return x;
}

namespace {

struct GroupedDirection {
  std::vector<std::vector<int>> groups;  // class -> neuron indices
  std::vector<Matrix> w;                 // D x |N_k|
  std::vector<Matrix> v;                 // d_y x |N_k|
};

GroupedDirection group_direction(const NetParams& dir, int num_classes,
                                 const std::vector<int>& partition) {
  if (static_cast<int>(partition.size()) != dir.width())
    throw DataError("partition size does not match width");
  GroupedDirection g;
  g.groups.assign(num_classes, {});
  for (int j = 0; j < dir.width(); ++j) {
    if (partition[j] >= num_classes) throw DataError("partition class out of range");
    if (partition[j] >= 0) g.groups[partition[j]].push_back(j);
  }
  for (int k = 0; k < num_classes; ++k) {
    Matrix wk(dir.dim(), g.groups[k].size());
    Matrix vk(dir.out_dim(), g.groups[k].size());
    for (std::size_t c = 0; c < g.groups[k].size(); ++c) {
      wk.col(c) = dir.W.col(g.groups[k][c]);
      vk.col(c) = dir.V.col(g.groups[k][c]);
    }
    g.w.push_back(std::move(wk));
    g.v.push_back(std::move(vk));
  }
  return g;
}

}  // namespace

KktReport kkt_residual(const NetParams& direction, const Dataset& data,
                       const std::vector<int>& partition) {
  const bool binary = direction.loss_kind != LossKind::CrossEntropy;
  const int K = data.num_classes;
  GroupedDirection g = group_direction(direction, K, partition);

  // Raw margins of the group-decomposed outputs.
  double min_margin = std::numeric_limits<double>::infinity();
  for (int k = 0; k < K; ++k) {
    if (g.groups[k].empty())
      throw DataError("class " + std::to_string(k) + " has no neurons in the partition");
    for (int i : data.class_indices[k]) {
      const Vector out = g.v[k] * (g.w[k].transpose() * data.points.col(i));
      if (binary) {
        min_margin = std::min(min_margin, binary_sign(k) * out[0]);
      } else {
        for (int l = 0; l < K; ++l) {
          if (l != k) min_margin = std::min(min_margin, out[k] - out[l]);
        }
      }
    }
  }

  KktReport rep;
  rep.min_margin_raw = min_margin;
  if (min_margin > 0.0) {
    rep.rescaled = true;
    rep.rescale = 1.0 / std::sqrt(min_margin);
    for (int k = 0; k < K; ++k) {
      g.w[k] *= rep.rescale;
      g.v[k] *= rep.rescale;
    }
  }

  for (int k = 0; k < K; ++k) {
    const auto& idx = data.class_indices[k];
    const int nk = static_cast<int>(idx.size());
    const int cols_per_sample = binary ? 1 : K - 1;
    const int nvar = nk * cols_per_sample;
    const int m = static_cast<int>(g.groups[k].size());
    const int nrow = (direction.dim() + direction.out_dim()) * m;

    KktClassReport cr;
    cr.cls = k;
    double class_min = std::numeric_limits<double>::infinity();

    Matrix a(nrow, nvar);
    Vector margins(nvar);
    int col = 0;
    for (int c = 0; c < nk; ++c) {
      const auto x = data.points.col(idx[c]);
      const Vector mvec = g.w[k].transpose() * x;  // |N_k|
      const Vector out = g.v[k] * mvec;
      if (binary) {
        const double sign = binary_sign(k);
        margins[col] = sign * out[0];
        class_min = std::min(class_min, margins[col]);
        Matrix dw = sign * x * g.v[k].row(0);          // D x m
        Matrix dv = sign * mvec.transpose();           // 1 x m
        a.col(col) << Eigen::Map<Vector>(dw.data(), dw.size()),
            Eigen::Map<Vector>(dv.data(), dv.size());
        ++col;
      } else {
        for (int l = 0; l < K; ++l) {
          if (l == k) continue;
          margins[col] = out[k] - out[l];
          class_min = std::min(class_min, margins[col]);
          Vector rho = g.v[k].row(k) - g.v[k].row(l);  // |N_k|
          Matrix dw = x * rho.transpose();             // D x m
          Matrix dv = Matrix::Zero(K, m);
          dv.row(k) = mvec.transpose();
          dv.row(l) = -mvec.transpose();
          a.col(col) << Eigen::Map<Vector>(dw.data(), dw.size()),
              Eigen::Map<Vector>(dv.data(), dv.size());
          ++col;
        }
      }
    }

    cr.min_margin_raw = rep.rescaled ? class_min / (rep.rescale * rep.rescale)
                                     : class_min;
    for (int c = 0; c < nvar; ++c) {
      if (margins[c] < 1.0 - 1e-9) {
        ++cr.feasibility_violations;
        cr.max_feasibility_violation =
            std::max(cr.max_feasibility_violation, 1.0 - margins[c]);
      }
    }

    if (rep.rescaled) {
      Vector b(nrow);
      Matrix w2 = 2.0 * g.w[k];
      Matrix v2 = 2.0 * g.v[k];
      b << Eigen::Map<Vector>(w2.data(), w2.size()),
          Eigen::Map<Vector>(v2.data(), v2.size());
      const Vector lam = nnls(a, b);
      cr.stationarity_residual = (b - a * lam).norm();
      for (int c = 0; c < nvar; ++c) {
        if (lam[c] > 1e-12) {
          ++cr.active_constraints;
          cr.comp_slack_max =
              std::max(cr.comp_slack_max, lam[c] * std::abs(margins[c] - 1.0));
        }
      }
    } else {
      cr.stationarity_residual = std::numeric_limits<double>::quiet_NaN();
    }

    rep.feasibility_violations_total += cr.feasibility_violations;
    rep.max_feasibility_violation =
        std::max(rep.max_feasibility_violation, cr.max_feasibility_violation);
    if (rep.rescaled)
      rep.stationarity_max = std::max(rep.stationarity_max, cr.stationarity_residual);
    else
      rep.stationarity_max = std::numeric_limits<double>::quiet_NaN();
    rep.classes.push_back(std::move(cr));
  }
  return rep;
}

}  // namespace ncflow
