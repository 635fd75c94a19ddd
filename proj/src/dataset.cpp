#include "ncflow/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "ncflow/rng.hpp"

namespace ncflow {

Vector Dataset::class_mean_direction(int k) const {
  Vector sum = Vector::Zero(dim());
  for (int i : class_indices.at(k)) sum += points.col(i);
  const double nrm = sum.norm();
  if (nrm == 0.0) throw DataError("class " + std::to_string(k) + " has zero mean direction");
  return sum / nrm;
}

Dataset make_dataset(Matrix points, std::vector<int> labels,
                     std::vector<int> source_labels) {
  Dataset d;
  const int n = static_cast<int>(points.cols());
  if (n == 0) throw DataError("dataset is empty");
  if (static_cast<int>(labels.size()) != n)
    throw DataError("label count does not match point count");
  int k = 0;
  for (int i = 0; i < n; ++i) {
    if (labels[i] < 0) throw DataError("negative label at index " + std::to_string(i));
    k = std::max(k, labels[i] + 1);
  }
  d.num_classes = k;
  d.class_indices.assign(k, {});
  for (int i = 0; i < n; ++i) d.class_indices[labels[i]].push_back(i);
  for (int c = 0; c < k; ++c) {
    if (d.class_indices[c].empty())
      throw DataError("class " + std::to_string(c) + " has no points");
  }
  for (int i = 0; i < n; ++i) {
    if (points.col(i).norm() == 0.0)
      throw DataError("point " + std::to_string(i) + " is the zero vector");
  }
  if (source_labels.empty()) {
    source_labels.resize(k);
    std::iota(source_labels.begin(), source_labels.end(), 0);
  } else if (static_cast<int>(source_labels.size()) != k) {
    throw DataError("source_labels size does not match class count");
  }
  d.points = std::move(points);
  d.labels = std::move(labels);
  d.source_labels = std::move(source_labels);
  return d;
}

SeparabilityCertificate validate_separability(const Dataset& data, double tol) {
  const int n = data.n();
  if (data.num_classes < 2) throw DataError("separability needs at least two classes");
  for (int i = 0; i < n; ++i) {
    if (data.points.col(i).norm() == 0.0)
      throw DataError("point " + std::to_string(i) + " has zero norm");
  }

  Matrix unit = data.points;
  Vector norms(n);
  for (int i = 0; i < n; ++i) {
    norms[i] = unit.col(i).norm();
    unit.col(i) /= norms[i];
  }

  SeparabilityCertificate cert;
  cert.tolerance = tol;
  cert.x_min = norms.minCoeff();
  cert.x_max = norms.maxCoeff();

  double same_min = 1.0;   // i == j pairs contribute exactly 1
  double cross_max = -1.0;
  std::int64_t same_pairs = n;  // the diagonal
  std::int64_t cross_pairs = 0;
  std::int64_t same_viol = 0;
  std::int64_t cross_viol = 0;

#pragma omp parallel for schedule(static) \
    reduction(min : same_min) reduction(max : cross_max) \
    reduction(+ : same_pairs, cross_pairs, same_viol, cross_viol)
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const double c = unit.col(i).dot(unit.col(j));
      if (data.labels[i] == data.labels[j]) {
        same_pairs += 2;
        same_min = std::min(same_min, c);
        if (c <= tol) same_viol += 2;
      } else {
        cross_pairs += 2;
        cross_max = std::max(cross_max, c);
        if (c >= -tol) cross_viol += 2;
      }
    }
  }

  cert.mu_s = same_min;
  cert.mu_d = -cross_max;
  cert.same_pairs = same_pairs;
  cert.cross_pairs = cross_pairs;
  cert.same_violations = same_viol;
  cert.cross_violations = cross_viol;
  cert.is_orthogonally_separable = cert.mu_s > tol && cert.mu_d > tol;
  if (cert.is_orthogonally_separable) {
    cert.strict_ratio =
        (cert.x_max * cert.x_max) / (cert.x_min * cert.x_min * cert.mu_d * cert.mu_s * cert.mu_s);
    cert.satisfies_strict_condition =
        cert.strict_ratio < 2.0 * data.num_classes - 3.0;
  } else {
    cert.strict_ratio = std::numeric_limits<double>::quiet_NaN();
    cert.satisfies_strict_condition = false;
  }
  return cert;
}

namespace {

// K unit anchors in R^D with pairwise inner product -1/(K-1): the columns of
// the K x K simplex frame expressed in an orthonormal basis of the subspace
// orthogonal to the all-ones vector, embedded in the first K-1 coordinates.
Matrix simplex_anchors(int num_classes, int dim) {
  const int K = num_classes;
  Matrix frame = Matrix::Identity(K, K) - Matrix::Constant(K, K, 1.0 / K);
  frame *= std::sqrt(static_cast<double>(K) / (K - 1));
  // Orthonormal basis of 1^perp via QR of [1 | I].
  Matrix m(K, K);
  m.col(0) = Vector::Constant(K, 1.0);
  m.block(0, 1, K, K - 1) = Matrix::Identity(K, K).leftCols(K - 1);
  Eigen::HouseholderQR<Matrix> qr(m);
  Matrix q = qr.householderQ();
  Matrix basis = q.rightCols(K - 1);  // K x (K-1)
  Matrix reduced = basis.transpose() * frame;  // (K-1) x K, columns unit
  Matrix anchors = Matrix::Zero(dim, K);
  anchors.topRows(K - 1) = reduced;
  for (int k = 0; k < K; ++k) anchors.col(k) /= anchors.col(k).norm();
  return anchors;
}

}  // namespace

Dataset generate_separable(const GenerateConfig& config) {
  if (config.num_classes < 2) throw DataError("generator needs at least two classes");
  if (config.dim < config.num_classes - 1)
    throw DataError("generator needs dim >= num_classes - 1");
  if (config.points_per_class < 1) throw DataError("points_per_class must be positive");
  if (config.norm_lo <= 0.0 || config.norm_hi < config.norm_lo)
    throw DataError("norm range must satisfy 0 < lo <= hi");

  const int K = config.num_classes;
  const int D = config.dim;
  const int per = config.points_per_class;
  const Matrix anchors = simplex_anchors(K, D);
  Rng rng(config.seed);

  double best_mu_s = 0.0, best_mu_d = 0.0;
  for (int attempt = 0; attempt < std::max(1, config.max_attempts); ++attempt) {
    Matrix pts(D, K * per);
    std::vector<int> labels(K * per);
    int col = 0;
    for (int k = 0; k < K; ++k) {
      for (int p = 0; p < per; ++p) {
        const Vector& a = anchors.col(k);
        Vector dir = a;
        if (config.cone_half_angle > 0.0) {
          // Uniform random direction orthogonal to the anchor spans the 2-plane
          // of the rotation.
          Vector g = rng.normal_vector(D);
          g -= g.dot(a) * a;
          double gn = g.norm();
          while (gn < 1e-12) {
            g = rng.normal_vector(D);
            g -= g.dot(a) * a;
            gn = g.norm();
          }
          const double phi = rng.uniform(0.0, config.cone_half_angle);
          dir = std::cos(phi) * a + std::sin(phi) * (g / gn);
        }
        pts.col(col) = dir * rng.uniform(config.norm_lo, config.norm_hi);
        labels[col] = k;
        ++col;
      }
    }
    Dataset candidate = make_dataset(std::move(pts), std::move(labels));
    const SeparabilityCertificate cert = validate_separability(candidate);
    if (cert.is_orthogonally_separable) return candidate;
    best_mu_s = cert.mu_s;
    best_mu_d = cert.mu_d;
  }
  std::ostringstream msg;
  msg << "generation failed after " << config.max_attempts
      << " attempts; achieved mu_s=" << best_mu_s << " mu_d=" << best_mu_d;
  throw DataError(msg.str());
}

CenterResult center_dataset(const Dataset& data) {
  const int n = data.n();
  const Vector mean = data.points.rowwise().sum() / static_cast<double>(n);
  Matrix centered = data.points.colwise() - mean;
  std::vector<int> keep;
  keep.reserve(n);
  for (int i = 0; i < n; ++i) {
    if (centered.col(i).norm() > 0.0) keep.push_back(i);
  }
  CenterResult out;
  out.dropped_points = n - static_cast<int>(keep.size());
  Matrix pts(data.dim(), keep.size());
  std::vector<int> labels(keep.size());
  for (std::size_t i = 0; i < keep.size(); ++i) {
    pts.col(i) = centered.col(keep[i]);
    labels[i] = data.labels[keep[i]];
  }
  out.data = make_dataset(std::move(pts), std::move(labels), data.source_labels);
  return out;
}

Dataset augment_bias(const Dataset& data) {
  Matrix pts(data.dim() + 1, data.n());
  pts.topRows(data.dim()) = data.points;
  pts.row(data.dim()).setOnes();
  return make_dataset(std::move(pts), data.labels, data.source_labels);
}

namespace {

std::uint32_t read_be32(std::ifstream& f, const std::string& path) {
  unsigned char b[4];
  if (!f.read(reinterpret_cast<char*>(b), 4))
    throw DataError("truncated IDX header in " + path);
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 const std::vector<int>& keep_classes, int max_per_class) {
  if (keep_classes.empty()) throw DataError("keep_classes is empty");

  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw DataError("cannot open " + images_path);
  const std::uint32_t img_magic = read_be32(img, images_path);
  if (img_magic != 0x00000803u) {
    std::ostringstream msg;
    msg << images_path << ": bad image magic 0x" << std::hex << img_magic
        << " (expected 0x803)";
    throw DataError(msg.str());
  }
  const std::uint32_t count = read_be32(img, images_path);
  const std::uint32_t rows = read_be32(img, images_path);
  const std::uint32_t cols = read_be32(img, images_path);

  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw DataError("cannot open " + labels_path);
  const std::uint32_t lab_magic = read_be32(lab, labels_path);
  if (lab_magic != 0x00000801u) {
    std::ostringstream msg;
    msg << labels_path << ": bad label magic 0x" << std::hex << lab_magic
        << " (expected 0x801)";
    throw DataError(msg.str());
  }
  const std::uint32_t lab_count = read_be32(lab, labels_path);
  if (lab_count != count) {
    std::ostringstream msg;
    msg << "image/label count mismatch: " << count << " vs " << lab_count;
    throw DataError(msg.str());
  }

  const int D = static_cast<int>(rows * cols);
  std::vector<int> new_label(256, -1);
  for (std::size_t k = 0; k < keep_classes.size(); ++k) {
    if (keep_classes[k] < 0 || keep_classes[k] > 255)
      throw DataError("keep class out of byte range");
    new_label[keep_classes[k]] = static_cast<int>(k);
  }

  std::vector<Vector> pts;
  std::vector<int> labels;
  std::vector<int> per_class(keep_classes.size(), 0);
  std::vector<unsigned char> buf(D);
  for (std::uint32_t i = 0; i < count; ++i) {
    if (!img.read(reinterpret_cast<char*>(buf.data()), D))
      throw DataError("truncated image data in " + images_path);
    unsigned char raw_label;
    if (!lab.read(reinterpret_cast<char*>(&raw_label), 1))
      throw DataError("truncated label data in " + labels_path);
    const int nl = new_label[raw_label];
    if (nl < 0) continue;
    if (max_per_class > 0 && per_class[nl] >= max_per_class) continue;
    ++per_class[nl];
    Vector v(D);
    for (int p = 0; p < D; ++p) v[p] = buf[p] / 255.0;
    pts.push_back(std::move(v));
    labels.push_back(nl);
  }
  if (pts.empty()) throw DataError("no requested classes found in " + images_path);

  Matrix m(D, pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) m.col(i) = pts[i];
  return make_dataset(std::move(m), std::move(labels), keep_classes);
}

namespace {

void append_double(std::string& out, double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, res.ptr);
}

}  // namespace

void save_csv(const Dataset& data, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path);
  std::string line;
  for (int i = 0; i < data.n(); ++i) {
    line.clear();
    for (int r = 0; r < data.dim(); ++r) {
      append_double(line, data.points(r, i));
      line.push_back(',');
    }
    line += std::to_string(data.labels[i]);
    line.push_back('\n');
    f << line;
  }
}

Dataset load_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  int width = -1;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::size_t pos = 0;
    while (pos <= line.size()) {
      std::size_t next = line.find(',', pos);
      if (next == std::string::npos) next = line.size();
      double v = 0.0;
      auto res = std::from_chars(line.data() + pos, line.data() + next, v);
      if (res.ec != std::errc())
        throw DataError(path + ": cannot parse field '" +
                        line.substr(pos, next - pos) + "'");
      row.push_back(v);
      pos = next + 1;
      if (next == line.size()) break;
    }
    if (width < 0) width = static_cast<int>(row.size());
    if (static_cast<int>(row.size()) != width)
      throw DataError(path + ": ragged row");
    rows.push_back(std::move(row));
  }
  if (rows.empty() || width < 2) throw DataError(path + ": no usable rows");
  const int D = width - 1;
  Matrix pts(D, rows.size());
  std::vector<int> labels(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (int r = 0; r < D; ++r) pts(r, i) = rows[i][r];
    labels[i] = static_cast<int>(std::lround(rows[i][D]));
  }
  return make_dataset(std::move(pts), std::move(labels));
}

}  // namespace ncflow
