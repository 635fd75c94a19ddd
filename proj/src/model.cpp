#include "ncflow/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ncflow/parallel.hpp"

namespace ncflow {

std::string loss_kind_name(LossKind kind) {
  switch (kind) {
    case LossKind::Exponential: return "exponential";
    case LossKind::Logistic: return "logistic";
    case LossKind::CrossEntropy: return "cross_entropy";
  }
  return "?";
}

LossKind loss_kind_from_name(const std::string& name) {
  if (name == "exponential") return LossKind::Exponential;
  if (name == "logistic") return LossKind::Logistic;
  if (name == "cross_entropy") return LossKind::CrossEntropy;
  throw ConfigError("unknown loss kind '" + name + "'");
}

void check_model_data(const NetParams& params, const Dataset& data) {
  if (params.dim() != data.dim())
    throw ConfigError("model input dim " + std::to_string(params.dim()) +
                      " does not match data dim " + std::to_string(data.dim()));
  if (params.loss_kind == LossKind::CrossEntropy) {
    if (params.out_dim() != data.num_classes)
      throw ConfigError("cross-entropy needs out_dim == K");
  } else {
    if (params.out_dim() != 1)
      throw ConfigError("binary losses need a scalar output");
    if (data.num_classes != 2)
      throw ConfigError("binary losses need exactly two classes");
  }
  if (params.width() < data.num_classes)
    throw ConfigError("width must be at least the number of classes");
}

ForwardResult forward(const NetParams& params, const Vector& x) {
  if (x.size() != params.dim()) throw DataError("input dimension mismatch");
  ForwardResult r;
  r.feature = (params.W.transpose() * x).cwiseMax(0.0);
  r.output = params.V * r.feature;
  return r;
}

Matrix features_all(const NetParams& params, const Matrix& points) {
  const int n = static_cast<int>(points.cols());
  Matrix feats(params.width(), n);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    feats.col(i) = (params.W.transpose() * points.col(i)).cwiseMax(0.0);
  }
  return feats;
}

Vector softmax(const Vector& z) {
  const double m = z.maxCoeff();
  Vector e = (z.array() - m).exp();
  return e / e.sum();
}

namespace {

double softplus(double z) {
  // log(1 + exp(z)) without overflow.
  return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

double sample_loss(const NetParams& params, const Dataset& data, int i,
                   const Vector& out) {
  switch (params.loss_kind) {
    case LossKind::Exponential: {
      const double e = -binary_sign(data.labels[i]) * out[0];
      return std::exp(std::min(e, 700.0));
    }
    case LossKind::Logistic:
      return 2.0 * softplus(-binary_sign(data.labels[i]) * out[0]);
    case LossKind::CrossEntropy: {
      const double m = out.maxCoeff();
      const double lse = m + std::log((out.array() - m).exp().sum());
      return lse - out[data.labels[i]];
    }
  }
  return 0.0;
}

// d(loss_i)/d(output): length d_y.
Vector sample_residual(const NetParams& params, const Dataset& data, int i,
                       const Vector& out) {
  switch (params.loss_kind) {
    case LossKind::Exponential: {
      const double y = binary_sign(data.labels[i]);
      Vector q(1);
      q[0] = -y * std::exp(-y * out[0]);
      return q;
    }
    case LossKind::Logistic: {
      const double y = binary_sign(data.labels[i]);
      const double z = -y * out[0];
      // sigmoid(z) without overflow
      const double s = z > 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
      Vector q(1);
      q[0] = -2.0 * y * s;
      return q;
    }
    case LossKind::CrossEntropy: {
      Vector q = softmax(out);
      q[data.labels[i]] -= 1.0;
      return q;
    }
  }
  return Vector();
}

std::vector<int> all_indices(int n) {
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

}  // namespace

double loss_subset(const NetParams& params, const Dataset& data,
                   const std::vector<int>& indices, bool divide_by_count) {
  const int n = static_cast<int>(indices.size());
  const int nb = num_blocks(n);
  std::vector<double> partial(nb, 0.0);
#pragma omp parallel for schedule(static)
  for (int b = 0; b < nb; ++b) {
    double acc = 0.0;
    for (int t = block_begin(b); t < block_end(b, n); ++t) {
      const int i = indices[t];
      const Vector feat = (params.W.transpose() * data.points.col(i)).cwiseMax(0.0);
      const Vector out = params.V * feat;
      acc += sample_loss(params, data, i, out);
    }
    partial[b] = acc;
  }
  double total = 0.0;
  for (double p : partial) total += p;
  return divide_by_count ? total / n : total;
}

double loss(const NetParams& params, const Dataset& data) {
  return loss_subset(params, data, all_indices(data.n()), false);
}

Gradients gradients_subset(const NetParams& params, const Dataset& data,
                           const std::vector<int>& indices,
                           double subgrad_at_zero, bool divide_by_count) {
  const int n = static_cast<int>(indices.size());
  const int h = params.width();
  const int nb = num_blocks(n);
  std::vector<Matrix> pW(nb), pV(nb);
#pragma omp parallel for schedule(static)
  for (int b = 0; b < nb; ++b) {
    Matrix dW = Matrix::Zero(params.dim(), h);
    Matrix dV = Matrix::Zero(params.out_dim(), h);
    for (int t = block_begin(b); t < block_end(b, n); ++t) {
      const int i = indices[t];
      const auto x = data.points.col(i);
      const Vector z = params.W.transpose() * x;
      const Vector feat = z.cwiseMax(0.0);
      const Vector out = params.V * feat;
      const Vector q = sample_residual(params, data, i, out);
      dV += q * feat.transpose();
      for (int j = 0; j < h; ++j) {
        double xi;
        if (z[j] > 0.0) {
          xi = 1.0;
        } else if (z[j] == 0.0) {
          xi = subgrad_at_zero;
          if (xi == 0.0) continue;
        } else {
          continue;
        }
        dW.col(j) += (xi * q.dot(params.V.col(j))) * x;
      }
    }
    pW[b] = std::move(dW);
    pV[b] = std::move(dV);
  }
  Gradients g;
  g.dW = Matrix::Zero(params.dim(), h);
  g.dV = Matrix::Zero(params.out_dim(), h);
  for (int b = 0; b < nb; ++b) {
    g.dW += pW[b];
    g.dV += pV[b];
  }
  if (divide_by_count) {
    g.dW /= n;
    g.dV /= n;
  }
  return g;
}

Gradients gradients(const NetParams& params, const Dataset& data,
                    double subgrad_at_zero) {
  return gradients_subset(params, data, all_indices(data.n()), subgrad_at_zero, false);
}

std::vector<SoftmaxBoundRow> softmax_deviation_bound_check(const NetParams& params,
                                                           const Dataset& data) {
  if (params.loss_kind != LossKind::CrossEntropy)
    throw ConfigError("softmax bound check needs a cross-entropy network");
  const int K = params.out_dim();
  const Vector uniform = Vector::Constant(K, 1.0 / K);
  std::vector<SoftmaxBoundRow> rows(data.n());
  for (int i = 0; i < data.n(); ++i) {
    const ForwardResult f = forward(params, data.points.col(i));
    SoftmaxBoundRow r;
    r.index = i;
    r.f_norm = f.output.norm();
    if (r.f_norm > 0.25) {
      r.skipped = true;
    } else {
      r.lhs = (softmax(f.output) - uniform).norm();
      r.rhs = 8.0 / std::sqrt(static_cast<double>(K)) * r.f_norm;
      r.holds = r.lhs <= r.rhs;
    }
    rows[i] = r;
  }
  return rows;
}

Matrix pseudo_label_frame(int num_classes) {
  if (num_classes < 2) throw ConfigError("pseudo-label frame needs K >= 2");
  const int K = num_classes;
  Matrix e = Matrix::Identity(K, K) - Matrix::Constant(K, K, 1.0 / K);
  e *= std::sqrt(static_cast<double>(K) / (K - 1));
  return e;
}

}  // namespace ncflow
