#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "ncflow/dataset.hpp"
#include "ncflow/rng.hpp"
#include "support/reference.hpp"

using namespace ncflow;
namespace fs = std::filesystem;

namespace {

Dataset two_point_antipodal() {
  Matrix pts(2, 2);
  pts << 1, -1, 0, 0;
  return make_dataset(pts, {0, 1});
}

fs::path temp_dir() {
  auto dir = fs::temp_directory_path() / "ncflow_dataset_test";
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("antipodal singleton classes certify with mu_s = mu_d = 1") {
  const auto cert = validate_separability(two_point_antipodal());
  CHECK(cert.mu_s == doctest::Approx(1.0));
  CHECK(cert.mu_d == doctest::Approx(1.0));
  CHECK(cert.is_orthogonally_separable);
  CHECK(cert.x_min == doctest::Approx(1.0));
  CHECK(cert.x_max == doctest::Approx(1.0));
}

TEST_CASE("symmetric three-class simplex directions") {
  Matrix pts(2, 3);
  pts << 1.0, -0.5, -0.5, 0.0, std::sqrt(3.0) / 2.0, -std::sqrt(3.0) / 2.0;
  const Dataset data = make_dataset(pts, {0, 1, 2});
  const auto cert = validate_separability(data);
  CHECK(cert.mu_s == doctest::Approx(1.0));
  CHECK(cert.mu_d == doctest::Approx(0.5));
  // Equal norms: strict ratio collapses to 1/(mu_d mu_s^2) = 2 < 2K-3 = 3.
  CHECK(cert.strict_ratio == doctest::Approx(2.0));
  CHECK(cert.satisfies_strict_condition);
}

TEST_CASE("validator matches the independent pairwise scan on a random cone instance") {
  GenerateConfig gc;
  gc.num_classes = 3;
  gc.dim = 6;
  gc.points_per_class = 20;
  gc.cone_half_angle = 0.2;
  gc.norm_lo = 0.8;
  gc.norm_hi = 1.2;
  gc.seed = 42;
  const Dataset data = generate_separable(gc);
  const auto fast = validate_separability(data);
  const auto slow = reference::validate_separability(data);
  CHECK(fast.mu_s == doctest::Approx(slow.mu_s).epsilon(1e-12));
  CHECK(fast.mu_d == doctest::Approx(slow.mu_d).epsilon(1e-12));
  CHECK(fast.x_min == doctest::Approx(slow.x_min));
  CHECK(fast.x_max == doctest::Approx(slow.x_max));
  CHECK(fast.same_pairs == slow.same_pairs);
  CHECK(fast.cross_pairs == slow.cross_pairs);
  CHECK(fast.same_violations == slow.same_violations);
  CHECK(fast.cross_violations == slow.cross_violations);
}

TEST_CASE("certificate is invariant under permutation and covariant under scaling") {
  GenerateConfig gc;
  gc.num_classes = 2;
  gc.dim = 4;
  gc.points_per_class = 12;
  gc.cone_half_angle = 0.3;
  gc.norm_lo = 0.5;
  gc.norm_hi = 2.0;
  gc.seed = 3;
  const Dataset data = generate_separable(gc);
  const auto base = validate_separability(data);

  Rng rng(9);
  std::vector<int> perm(data.n());
  for (int i = 0; i < data.n(); ++i) perm[i] = i;
  rng.shuffle(perm);
  Matrix pts(data.dim(), data.n());
  std::vector<int> labels(data.n());
  for (int i = 0; i < data.n(); ++i) {
    pts.col(i) = data.points.col(perm[i]);
    labels[i] = data.labels[perm[i]];
  }
  const auto permuted = validate_separability(make_dataset(pts, labels));
  CHECK(permuted.mu_s == doctest::Approx(base.mu_s).epsilon(1e-14));
  CHECK(permuted.mu_d == doctest::Approx(base.mu_d).epsilon(1e-14));

  const double c = 3.5;
  const auto scaled = validate_separability(make_dataset(c * data.points, data.labels));
  CHECK(scaled.mu_s == doctest::Approx(base.mu_s).epsilon(1e-12));
  CHECK(scaled.mu_d == doctest::Approx(base.mu_d).epsilon(1e-12));
  CHECK(scaled.x_min == doctest::Approx(c * base.x_min));
  CHECK(scaled.x_max == doctest::Approx(c * base.x_max));
}

TEST_CASE("zero-norm point is rejected with its index") {
  Matrix pts(2, 3);
  pts << 1, 0, -1, 0, 0, 0;
  CHECK_THROWS_WITH_AS(make_dataset(pts, {0, 0, 1}), doctest::Contains("point 1"),
                       DataError);
}

TEST_CASE("generator: K = 2 cone 0 gives an antipodal pair") {
  GenerateConfig gc;
  gc.num_classes = 2;
  gc.dim = 2;
  gc.points_per_class = 1;
  gc.seed = 5;
  const Dataset data = generate_separable(gc);
  const Vector a = data.points.col(0).normalized();
  const Vector b = data.points.col(1).normalized();
  CHECK(a.dot(b) == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("generator: K = 3 frame has pairwise correlation -1/2") {
  GenerateConfig gc;
  gc.num_classes = 3;
  gc.dim = 3;
  gc.points_per_class = 1;
  gc.seed = 5;
  const Dataset data = generate_separable(gc);
  for (int i = 0; i < 3; ++i) {
    CHECK(data.points.col(i).norm() == doctest::Approx(1.0).epsilon(1e-12));
    for (int j = i + 1; j < 3; ++j) {
      CHECK(data.points.col(i).dot(data.points.col(j)) ==
            doctest::Approx(-0.5).epsilon(1e-12));
    }
  }
}

TEST_CASE("generator: zero cone angle keeps mu_s exactly 1") {
  GenerateConfig gc;
  gc.num_classes = 3;
  gc.dim = 8;
  gc.points_per_class = 10;
  gc.cone_half_angle = 0.0;
  gc.norm_lo = 0.5;
  gc.norm_hi = 1.5;
  gc.seed = 11;
  const auto cert = validate_separability(generate_separable(gc));
  CHECK(cert.mu_s >= 1.0 - 1e-12);
}

TEST_CASE("generator fixture: K=3 D=10 cone 0.15 seed 7") {
  GenerateConfig gc;
  gc.num_classes = 3;
  gc.dim = 10;
  gc.points_per_class = 20;
  gc.cone_half_angle = 0.15;
  gc.norm_lo = 0.9;
  gc.norm_hi = 1.1;
  gc.seed = 7;
  const auto cert = validate_separability(generate_separable(gc));
  CHECK(cert.is_orthogonally_separable);
  CHECK(cert.mu_s >= std::cos(0.3));
  // mu_d never exceeds the frame bound 1/sqrt(K-1).
  CHECK(cert.mu_d <= 1.0 / std::sqrt(2.0) + 1e-9);
}

TEST_CASE("generated mu_d respects the 1/sqrt(K-1) ceiling across K") {
  for (int k = 2; k <= 5; ++k) {
    GenerateConfig gc;
    gc.num_classes = k;
    gc.dim = 8;
    gc.points_per_class = 6;
    gc.cone_half_angle = 0.05;
    gc.seed = 100 + k;
    const auto cert = validate_separability(generate_separable(gc));
    CHECK(cert.mu_d <= 1.0 / std::sqrt(k - 1.0) + 1e-9);
  }
}

TEST_CASE("centering: zero-mean data is unchanged") {
  const Dataset data = two_point_antipodal();
  const CenterResult out = center_dataset(data);
  CHECK(out.dropped_points == 0);
  CHECK((out.data.points - data.points).norm() == doctest::Approx(0.0));
}

TEST_CASE("centering drops points that land exactly on zero") {
  // Mean of {(2,0), (1,0), (0,0)...} — craft a point equal to the mean.
  Matrix pts(2, 3);
  pts << 3, 3, 3, 1, 2, 3;
  const Dataset data = make_dataset(pts, {0, 0, 1});
  // Mean is (3, 2); the middle point lands on zero after centering.
  const CenterResult out = center_dataset(data);
  CHECK(out.dropped_points == 1);
  CHECK(out.data.n() == 2);
}

TEST_CASE("bias augmentation appends a homogeneous coordinate") {
  const Dataset data = two_point_antipodal();
  const Dataset aug = augment_bias(data);
  CHECK(aug.dim() == 3);
  CHECK(aug.points(2, 0) == 1.0);
  CHECK(aug.points(2, 1) == 1.0);
}

TEST_CASE("CSV round trip preserves points and labels") {
  GenerateConfig gc;
  gc.num_classes = 3;
  gc.dim = 5;
  gc.points_per_class = 4;
  gc.cone_half_angle = 0.2;
  gc.norm_lo = 0.7;
  gc.norm_hi = 1.4;
  gc.seed = 21;
  const Dataset data = generate_separable(gc);
  const auto path = (temp_dir() / "roundtrip.csv").string();
  save_csv(data, path);
  const Dataset back = load_csv(path);
  REQUIRE(back.n() == data.n());
  CHECK((back.points - data.points).norm() == doctest::Approx(0.0));
  CHECK(back.labels == data.labels);
}

namespace {

void write_be32(std::ofstream& f, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v)};
  f.write(reinterpret_cast<const char*>(b), 4);
}

void write_idx_pair(const fs::path& img_path, const fs::path& lab_path,
                    const std::vector<std::vector<unsigned char>>& images,
                    const std::vector<unsigned char>& labels, int rows, int cols,
                    std::uint32_t image_magic = 0x803, std::uint32_t label_magic = 0x801,
                    int label_count_override = -1) {
  std::ofstream img(img_path, std::ios::binary);
  write_be32(img, image_magic);
  write_be32(img, static_cast<std::uint32_t>(images.size()));
  write_be32(img, rows);
  write_be32(img, cols);
  for (const auto& im : images)
    img.write(reinterpret_cast<const char*>(im.data()), im.size());
  std::ofstream lab(lab_path, std::ios::binary);
  write_be32(lab, label_magic);
  write_be32(lab, label_count_override >= 0 ? label_count_override
                                            : static_cast<std::uint32_t>(labels.size()));
  lab.write(reinterpret_cast<const char*>(labels.data()), labels.size());
}

}  // namespace

TEST_CASE("IDX loader: relabeling, scaling, and caps") {
  const auto dir = temp_dir();
  std::vector<std::vector<unsigned char>> images;
  std::vector<unsigned char> labels;
  // digits 5, 2, 7, 2, 5, 5 on 2x2 images
  for (unsigned char digit : {5, 2, 7, 2, 5, 5}) {
    images.push_back({digit, 0, 255, digit});
    labels.push_back(digit);
  }
  write_idx_pair(dir / "img.idx", dir / "lab.idx", images, labels, 2, 2);

  const Dataset data = load_idx((dir / "img.idx").string(), (dir / "lab.idx").string(),
                                {5, 2}, 2);
  CHECK(data.n() == 4);  // 2 fives (capped), 2 twos; the seven is excluded
  CHECK(data.num_classes == 2);
  CHECK(data.source_labels == std::vector<int>{5, 2});
  CHECK(data.dim() == 4);
  CHECK(data.points(2, 0) == doctest::Approx(1.0));       // 255 -> 1
  CHECK(data.points(0, 0) == doctest::Approx(5.0 / 255));  // scaled pixel
  CHECK(data.labels[0] == 0);  // first five
  CHECK(data.labels[1] == 1);  // first two
}

TEST_CASE("IDX loader error paths") {
  const auto dir = temp_dir();
  std::vector<std::vector<unsigned char>> images{{1, 2, 3, 4}};
  std::vector<unsigned char> labels{1};

  SUBCASE("image magic passed as labels") {
    write_idx_pair(dir / "i1.idx", dir / "l1.idx", images, labels, 2, 2, 0x803, 0x803);
    CHECK_THROWS_WITH_AS(
        load_idx((dir / "i1.idx").string(), (dir / "l1.idx").string(), {1}, 0),
        doctest::Contains("magic"), DataError);
  }
  SUBCASE("count mismatch") {
    write_idx_pair(dir / "i2.idx", dir / "l2.idx", images, labels, 2, 2, 0x803, 0x801, 5);
    CHECK_THROWS_WITH_AS(
        load_idx((dir / "i2.idx").string(), (dir / "l2.idx").string(), {1}, 0),
        doctest::Contains("mismatch"), DataError);
  }
  SUBCASE("truncated images") {
    std::ofstream img(dir / "i3.idx", std::ios::binary);
    write_be32(img, 0x803);
    write_be32(img, 3);
    write_be32(img, 2);
    write_be32(img, 2);
    img.write("\x01\x02", 2);
    img.close();
    std::ofstream lab(dir / "l3.idx", std::ios::binary);
    write_be32(lab, 0x801);
    write_be32(lab, 3);
    lab.write("\x01\x01\x01", 3);
    lab.close();
    CHECK_THROWS_WITH_AS(
        load_idx((dir / "i3.idx").string(), (dir / "l3.idx").string(), {1}, 0),
        doctest::Contains("truncated"), DataError);
  }
}

TEST_CASE("real MNIST: the first training image is a 5 and is excluded by keep {0,1,2}") {
  const char* env = std::getenv("NCFLOW_MNIST_DIR");
  std::string dir = env != nullptr && *env != '\0' ? env : NCFLOW_SOURCE_DIR "/data/mnist";
  if (!fs::exists(fs::path(dir) / "train-images-idx3-ubyte")) {
    MESSAGE("MNIST data not present; loader checked against synthetic IDX files only");
    return;
  }
  const Dataset five = load_idx((fs::path(dir) / "train-images-idx3-ubyte").string(),
                                (fs::path(dir) / "train-labels-idx1-ubyte").string(),
                                {5}, 1);
  const Dataset kept = load_idx((fs::path(dir) / "train-images-idx3-ubyte").string(),
                                (fs::path(dir) / "train-labels-idx1-ubyte").string(),
                                {0, 1, 2}, 500);
  CHECK(five.dim() == 784);
  CHECK(kept.n() <= 1500);
  CHECK(kept.dim() == 784);
  // The very first image (a five) can only appear in the {5} load.
  CHECK((five.points.col(0) - kept.points.col(0)).norm() > 0.0);
}

TEST_CASE("generator rejects impossible requests") {
  GenerateConfig gc;
  gc.num_classes = 4;
  gc.dim = 2;  // needs dim >= K-1
  CHECK_THROWS_AS(generate_separable(gc), DataError);
}
