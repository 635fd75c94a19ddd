#include "ncflow/collapse.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ncflow {

NCMetrics nc_metrics(const Matrix& features, const std::vector<int>& labels,
                     int num_classes, const Matrix& classifier) {
  const int n = static_cast<int>(features.cols());
  const int h = static_cast<int>(features.rows());
  const int K = num_classes;
  if (K < 2) throw DataError("NC metrics need at least two classes");
  if (static_cast<int>(labels.size()) != n) throw DataError("label count mismatch");

  std::vector<std::vector<int>> idx(K);
  for (int i = 0; i < n; ++i) {
    if (labels[i] < 0 || labels[i] >= K) throw DataError("label out of range");
    idx[labels[i]].push_back(i);
  }
  for (int k = 0; k < K; ++k) {
    if (idx[k].empty()) throw DataError("class " + std::to_string(k) + " empty");
  }

  Matrix means(h, K);
  for (int k = 0; k < K; ++k) {
    Vector m = Vector::Zero(h);
    for (int i : idx[k]) m += features.col(i);
    means.col(k) = m / static_cast<double>(idx[k].size());
  }
  const Vector global = means.rowwise().sum() / static_cast<double>(K);

  NCMetrics out;

  double intra = 0.0;
  for (int k = 0; k < K; ++k) {
    double s = 0.0;
    for (int i : idx[k]) s += (features.col(i) - means.col(k)).squaredNorm();
    intra += s / static_cast<double>(idx[k].size());
  }
  double inter = 0.0;
  for (int k = 0; k < K; ++k) inter += (means.col(k) - global).squaredNorm();
  if (inter > 0.0) out.nc1 = intra / inter;

  bool means_ok = true;
  Matrix dirs(h, K);
  for (int k = 0; k < K; ++k) {
    const double nrm = means.col(k).norm();
    if (nrm == 0.0) {
      means_ok = false;
      break;
    }
    dirs.col(k) = means.col(k) / nrm;
  }
  if (means_ok) {
    const Matrix gram = dirs.transpose() * dirs;
    out.nc2 = (gram / gram.norm() -
               Matrix::Identity(K, K) / std::sqrt(static_cast<double>(K)))
                  .norm();
  }

  if (means_ok && classifier.rows() == K && classifier.cols() == h) {
    // Pseudo-inverse of the class-mean-direction matrix (rows are directions).
    Eigen::JacobiSVD<Matrix> svd(dirs.transpose(),
                                 Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vector sv = svd.singularValues();
    const double cutoff = 1e-10 * sv[0];
    Matrix inv_s = Matrix::Zero(sv.size(), sv.size());
    for (int i = 0; i < sv.size(); ++i) {
      if (sv[i] > cutoff) inv_s(i, i) = 1.0 / sv[i];
    }
    const Matrix pinv = svd.matrixV() * inv_s * svd.matrixU().transpose();  // h x K
    const Matrix m = classifier * pinv;                                    // K x K
    const double nrm = m.norm();
    if (nrm > 0.0) {
      out.nc3 = (m / nrm -
                 pseudo_label_frame(K) / std::sqrt(static_cast<double>(K - 1)))
                    .norm();
    }
  }
  return out;
}

namespace {

// Sign fix: make the largest-magnitude entry positive.
void fix_sign(Vector& v) {
  int arg = 0;
  for (int i = 1; i < v.size(); ++i) {
    if (std::abs(v[i]) > std::abs(v[arg])) arg = i;
  }
  if (v[arg] < 0.0) v = -v;
}

}  // namespace

CollapseReport limit_residuals(const NetParams& direction, const Dataset& data,
                               const std::vector<int>& partition,
                               const MarginCertificate& cert) {
  const int K = data.num_classes;
  const int h = direction.width();
  const bool binary = direction.loss_kind != LossKind::CrossEntropy;
  if (static_cast<int>(partition.size()) != h)
    throw DataError("partition size does not match width");
  if (static_cast<int>(cert.per_class.size()) != K)
    throw DataError("margin certificate class count mismatch");

  const Matrix feats = features_all(direction, data.points);
  CollapseReport rep;
  rep.nc = nc_metrics(feats, data.labels, K, direction.V);

  Matrix frame;
  if (!binary) frame = pseudo_label_frame(K);

  std::vector<std::vector<int>> groups(K);
  for (int j = 0; j < h; ++j) {
    if (partition[j] >= K) throw DataError("partition class out of range");
    if (partition[j] >= 0) groups[partition[j]].push_back(j);
  }

  Matrix mean_dirs = Matrix::Zero(h, K);
  rep.min_mean_entry = std::numeric_limits<double>::infinity();
  rep.min_w_dir_cos = std::numeric_limits<double>::infinity();
  rep.min_v_mean_cos = std::numeric_limits<double>::infinity();

  for (int k = 0; k < K; ++k) {
    ClassCollapse cc;
    cc.cls = k;
    const auto& idx = data.class_indices[k];
    cc.samples = static_cast<int>(idx.size());

    Matrix fk(h, idx.size());
    for (std::size_t c = 0; c < idx.size(); ++c) fk.col(c) = feats.col(idx[c]);
    if (fk.norm() == 0.0) {
      cc.vacuous = true;
      rep.classes.push_back(std::move(cc));
      continue;
    }

    Eigen::JacobiSVD<Matrix> svd(fk, Eigen::ComputeThinU);
    const Vector sv = svd.singularValues();
    cc.sigma1 = sv[0];
    cc.sigma2 = sv.size() > 1 ? sv[1] : 0.0;
    cc.rank1_residual = cc.sigma2 / cc.sigma1;
    Vector dir = svd.matrixU().col(0);
    // Coordinates whose feature row is identically zero are exactly zero in
    // the mean direction too; the SVD preconditioner can smear them with
    // rounding dust, which would spoil the exact ReLU orthogonality pattern.
    for (int r = 0; r < dir.size(); ++r) {
      if (fk.row(r).cwiseAbs().maxCoeff() == 0.0) dir[r] = 0.0;
    }
    dir /= dir.norm();
    fix_sign(dir);
    cc.mean_direction = dir;
    cc.min_mean_entry = dir.minCoeff();
    mean_dirs.col(k) = dir;

    // Collapse and projection-scale residuals against <s_k u_k, x_i>.
    const double sk = cert.s[k];
    const Vector& uk = cert.per_class[k].u;
    for (int i : idx) {
      const double fn = feats.col(i).norm();
      if (fn == 0.0) {
        cc.vacuous = true;  // a zero feature inside a nonzero class
        continue;
      }
      const double proj = sk * uk.dot(data.points.col(i));
      cc.collapse_residual =
          std::max(cc.collapse_residual, (feats.col(i) - proj * dir).norm() / fn);
      cc.scale_residual = std::max(cc.scale_residual, std::abs(fn - proj) / fn);
    }

    // Group norms and directions against the predicted rank-one factors.
    const auto& grp = groups[k];
    if (!grp.empty()) {
      Matrix wk(direction.dim(), grp.size());
      Matrix vk(direction.out_dim(), grp.size());
      for (std::size_t c = 0; c < grp.size(); ++c) {
        wk.col(c) = direction.W.col(grp[c]);
        vk.col(c) = direction.V.col(grp[c]);
      }
      cc.w_fro = wk.norm();
      cc.v_fro = vk.norm();

      Eigen::JacobiSVD<Matrix> wsvd(wk, Eigen::ComputeThinU | Eigen::ComputeThinV);
      Vector wu = wsvd.matrixU().col(0);
      Vector wg = wsvd.matrixV().col(0);
      // Resolve the (u, g) sign ambiguity toward nonnegative feature coords.
      int arg = 0;
      for (int i = 1; i < wg.size(); ++i) {
        if (std::abs(wg[i]) > std::abs(wg[arg])) arg = i;
      }
      if (wg[arg] < 0.0) {
        wg = -wg;
        wu = -wu;
      }
      cc.w_dir_cos_u = wu.dot(cert.per_class[k].u);

      if (binary) {
        const double want = binary_sign(k);
        bool ok = true;
        for (std::size_t c = 0; c < grp.size(); ++c) {
          if (vk(0, c) * want <= 0.0) ok = false;
        }
        cc.v_mean_cos = ok ? 1.0 : 0.0;
      } else {
        Vector vm = vk.rowwise().sum();
        const double vn = vm.norm();
        cc.v_mean_cos = vn > 0.0 ? frame.col(k).dot(vm) / vn : 0.0;
      }

      const double sk_rel = std::max(std::abs(cc.w_fro - sk), std::abs(cc.v_fro - sk)) / sk;
      rep.max_scale_rel_error = std::max(rep.max_scale_rel_error, sk_rel);
      rep.min_w_dir_cos = std::min(rep.min_w_dir_cos, cc.w_dir_cos_u);
      rep.min_v_mean_cos = std::min(rep.min_v_mean_cos, cc.v_mean_cos);
    }

    rep.max_rank1_residual = std::max(rep.max_rank1_residual, cc.rank1_residual);
    rep.max_collapse_residual = std::max(rep.max_collapse_residual, cc.collapse_residual);
    rep.min_mean_entry = std::min(rep.min_mean_entry, cc.min_mean_entry);
    rep.classes.push_back(std::move(cc));
  }

  for (int k = 0; k < K; ++k) {
    for (int k2 = k + 1; k2 < K; ++k2) {
      rep.orthogonality =
          std::max(rep.orthogonality, std::abs(mean_dirs.col(k).dot(mean_dirs.col(k2))));
    }
  }

  // Projected self-duality.
  Matrix predicted;
  if (binary) {
    predicted = cert.s[0] * mean_dirs.col(0).transpose() -
                cert.s[1] * mean_dirs.col(1).transpose();  // 1 x h
  } else {
    Matrix scaled = mean_dirs;  // h x K, columns s_k phi-bar_k
    for (int k = 0; k < K; ++k) scaled.col(k) *= cert.s[k];
    predicted = frame * scaled.transpose();  // K x h
  }
  const double vn = direction.V.norm();
  rep.duality_residual = vn > 0.0
                             ? (direction.V - predicted).norm() / vn
                             : std::numeric_limits<double>::quiet_NaN();
  return rep;
}

PcaSummary feature_pca_summary(const Matrix& features, int top_r) {
  if (top_r < 1) throw ConfigError("top_r must be >= 1");
  Eigen::JacobiSVD<Matrix> svd(features, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector sv = svd.singularValues();
  const double total = sv.squaredNorm();
  const int rank = static_cast<int>(sv.size());

  PcaSummary out;
  out.explained = Vector::Zero(top_r);
  out.components = Matrix::Zero(features.rows(), top_r);
  out.coords = Matrix::Zero(top_r, features.cols());
  for (int r = 0; r < std::min(top_r, rank); ++r) {
    out.explained[r] = total > 0.0 ? sv[r] * sv[r] / total : 0.0;
    Vector comp = svd.matrixU().col(r);
    Vector coord = sv[r] * svd.matrixV().col(r);
    int arg = 0;
    for (int i = 1; i < comp.size(); ++i) {
      if (std::abs(comp[i]) > std::abs(comp[arg])) arg = i;
    }
    if (comp[arg] < 0.0) {
      comp = -comp;
      coord = -coord;
    }
    out.components.col(r) = comp;
    out.coords.row(r) = coord.transpose();
  }
  return out;
}

}  // namespace ncflow
