#include "ncflow/init.hpp"

#include <algorithm>
#include <cmath>

#include "ncflow/rng.hpp"

namespace ncflow {

double default_epsilon(int width) { return 1e-4 / std::sqrt(static_cast<double>(width)); }

InitShape random_balanced(int dim, int out_dim, int width, double epsilon,
                          std::uint64_t seed) {
  if (width < 1 || epsilon <= 0.0) throw ConfigError("need width >= 1 and epsilon > 0");
  Rng rng(seed);
  InitShape s;
  s.epsilon = epsilon;
  s.w_shapes = Matrix(dim, width);
  s.v_shapes = Matrix(out_dim, width);
  for (int j = 0; j < width; ++j) {
    s.w_shapes.col(j) = rng.normal_vector(dim);
    s.v_shapes.col(j) = rng.normal_vector(out_dim);
    const double wn = s.w_shapes.col(j).norm();
    const double vn = s.v_shapes.col(j).norm();
    if (wn == 0.0 || vn == 0.0) {  // astronomically unlikely; resample via offset
      --j;
      continue;
    }
    s.v_shapes.col(j) *= wn / vn;
  }
  return s;
}

NetParams materialize(const InitShape& shape, LossKind loss_kind) {
  NetParams p;
  p.W = shape.epsilon * shape.w_shapes;
  p.V = shape.epsilon * shape.v_shapes;
  p.loss_kind = loss_kind;
  return p;
}

void check_shape_invariants(const InitShape& shape) {
  if (shape.epsilon <= 0.0) throw ConfigError("epsilon must be positive");
  for (int j = 0; j < shape.width(); ++j) {
    const double wn = shape.w_shapes.col(j).norm();
    const double vn = shape.v_shapes.col(j).norm();
    if (wn == 0.0 || vn == 0.0)
      throw ConfigError("zero shape vector at neuron " + std::to_string(j));
    if (std::abs(wn - vn) > 1e-12)
      throw ConfigError("unbalanced shape pair at neuron " + std::to_string(j));
  }
}

NonDegenerateReport check_non_degenerate(const InitShape& shape, const Dataset& data) {
  if (shape.out_dim() != 1) throw ConfigError("non-degeneracy check needs scalar output shapes");
  if (data.num_classes != 2) throw ConfigError("non-degeneracy check needs K == 2");

  NonDegenerateReport rep;
  std::vector<int> plus, minus;
  for (int j = 0; j < shape.width(); ++j) {
    const double v = shape.v_shapes(0, j);
    if (v > 0.0) {
      plus.push_back(j);
    } else if (v < 0.0) {
      minus.push_back(j);
    } else {
      rep.zero_v_indices.push_back(j);
    }
  }
  rep.n_plus = static_cast<int>(plus.size());
  rep.n_minus = static_cast<int>(minus.size());

  const Vector mean_plus = data.class_mean_direction(0);
  const Vector mean_minus = data.class_mean_direction(1);

  auto max_activation = [&](const std::vector<int>& group, int cls) {
    double best = -std::numeric_limits<double>::infinity();
    for (int j : group) {
      for (int i : data.class_indices[cls]) {
        best = std::max(best, data.points.col(i).dot(shape.w_shapes.col(j)));
      }
    }
    return best;
  };
  auto max_repeller_cos = [&](const std::vector<int>& group, const Vector& repeller) {
    double best = -std::numeric_limits<double>::infinity();
    for (int j : group) {
      const Vector w = shape.w_shapes.col(j);
      best = std::max(best, repeller.dot(w) / w.norm());
    }
    return best;
  };

  rep.activation_plus = plus.empty() ? 0.0 : max_activation(plus, 0);
  rep.activation_minus = minus.empty() ? 0.0 : max_activation(minus, 1);
  rep.repeller_plus_cos = plus.empty() ? 1.0 : max_repeller_cos(plus, mean_minus);
  rep.repeller_minus_cos = minus.empty() ? 1.0 : max_repeller_cos(minus, mean_plus);
  rep.repeller_slack =
      std::min(1.0 - rep.repeller_plus_cos, 1.0 - rep.repeller_minus_cos);

  rep.satisfied = rep.zero_v_indices.empty() && rep.n_plus > 0 && rep.n_minus > 0 &&
                  rep.activation_plus > 0.0 && rep.activation_minus > 0.0 &&
                  rep.repeller_slack > 1e-12;
  return rep;
}

SemiLocalReport check_semi_local(const InitShape& shape, const Dataset& data,
                                 const std::vector<int>& partition) {
  const int K = data.num_classes;
  if (K <= 2) throw ConfigError("semi-local check needs K > 2");
  if (static_cast<int>(partition.size()) != shape.width())
    throw DataError("partition size does not match width");
  std::vector<int> per_class(K, 0);
  for (int j = 0; j < shape.width(); ++j) {
    if (partition[j] < 0 || partition[j] >= K)
      throw DataError("partition class out of range at neuron " + std::to_string(j));
    ++per_class[partition[j]];
  }

  const Matrix frame = pseudo_label_frame(K);
  const double pseudo_floor = 1.0 - 1.0 / (2.0 * (K - 1));

  SemiLocalReport rep;
  rep.partition = partition;
  rep.all_satisfied = true;
  for (int c : per_class) {
    if (c == 0) rep.all_satisfied = false;
  }

  for (int j = 0; j < shape.width(); ++j) {
    SemiLocalNeuron nr;
    nr.neuron = j;
    nr.cls = partition[j];
    nr.active_counts.assign(K, 0);
    nr.aggregate.assign(K, 0.0);
    const Vector w = shape.w_shapes.col(j) / shape.w_shapes.col(j).norm();
    for (int i = 0; i < data.n(); ++i) {
      const double a = data.points.col(i).dot(w);
      if (a > 0.0) {
        nr.active_counts[data.labels[i]] += 1;
        nr.aggregate[data.labels[i]] += a;
      }
    }
    double other_sq = 0.0, other_agg = 0.0;
    for (int k = 0; k < K; ++k) {
      if (k == nr.cls) continue;
      other_sq += static_cast<double>(nr.active_counts[k]) * nr.active_counts[k];
      other_agg += nr.aggregate[k];
    }
    const double own = static_cast<double>(nr.active_counts[nr.cls]);
    nr.count_slack = own * own - other_sq;
    nr.aggregate_slack = nr.aggregate[nr.cls] - 2.0 * other_agg;
    const Vector v = shape.v_shapes.col(j) / shape.v_shapes.col(j).norm();
    nr.pseudo_alignment = frame.col(nr.cls).dot(v);
    nr.pseudo_slack = nr.pseudo_alignment - pseudo_floor;
    nr.ok = nr.count_slack > 0.0 && nr.aggregate_slack > 0.0 && nr.pseudo_slack >= 0.0;
    if (!nr.ok) rep.all_satisfied = false;
    rep.neurons.push_back(std::move(nr));
  }
  return rep;
}

SeededShapes data_seeded_shapes(const Dataset& data, int width, double epsilon,
                                std::uint64_t seed) {
  const int K = data.num_classes;
  if (width < K) throw ConfigError("data-seeded shapes need width >= K");
  Rng rng(seed);
  const Matrix frame = pseudo_label_frame(K);

  SeededShapes out;
  out.shape.epsilon = epsilon;
  out.shape.w_shapes = Matrix(data.dim(), width);
  out.shape.v_shapes = Matrix(K, width);
  out.partition.resize(width);
  for (int j = 0; j < width; ++j) {
    int i;
    if (j < K) {  // stratified: class j gets its first neuron here
      const auto& idx = data.class_indices[j];
      i = idx[rng.below(idx.size())];
    } else {
      i = static_cast<int>(rng.below(data.n()));
    }
    const int cls = data.labels[i];
    out.shape.w_shapes.col(j) = data.points.col(i) / data.points.col(i).norm();
    out.shape.v_shapes.col(j) = frame.col(cls);
    out.partition[j] = cls;
  }
  return out;
}

}  // namespace ncflow
