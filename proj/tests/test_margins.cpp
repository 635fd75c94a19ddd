#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ncflow/dataset.hpp"
#include "ncflow/margins.hpp"
#include "ncflow/model.hpp"
#include "ncflow/rng.hpp"
#include "support/oracles.hpp"

using namespace ncflow;

namespace {

// Points inside a cone of half-angle < pi/4 around a random center are
// pairwise positively correlated.
Matrix positively_correlated_set(int dim, int count, Rng& rng) {
  Vector center = rng.normal_vector(dim);
  center /= center.norm();
  Matrix pts(dim, count);
  for (int i = 0; i < count; ++i) {
    Vector g = rng.normal_vector(dim);
    g -= g.dot(center) * center;
    if (g.norm() > 0.0) g /= g.norm();
    const double phi = rng.uniform(0.0, M_PI / 5.0);
    const double r = rng.uniform(0.5, 2.0);
    pts.col(i) = r * (std::cos(phi) * center + std::sin(phi) * g);
  }
  return pts;
}

}  // namespace

TEST_CASE("single point: the margin direction is the point itself") {
  Matrix pts(3, 1);
  pts << 1.5, 0, 2.0;
  const MarginSolution sol = class_max_margin(pts);
  CHECK(sol.gamma == doctest::Approx(pts.col(0).norm()).epsilon(1e-12));
  CHECK((sol.u - pts.col(0).normalized()).norm() <= 1e-12);
  CHECK(sol.gap <= 1e-9);
  CHECK(sol.support_weights[0] == doctest::Approx(1.0));
}

TEST_CASE("symmetric pair: the bisector wins") {
  Matrix pts(2, 2);
  pts << 1, 0, 0, 1;
  const MarginSolution sol = class_max_margin(pts);
  const double r = std::sqrt(2.0) / 2.0;
  CHECK(sol.gamma == doctest::Approx(r).epsilon(1e-9));
  CHECK(sol.u[0] == doctest::Approx(r).epsilon(1e-7));
  CHECK(sol.u[1] == doctest::Approx(r).epsilon(1e-7));
}

TEST_CASE("asymmetric pair {(2,0),(0,1)}") {
  Matrix pts(2, 2);
  pts << 2, 0, 0, 1;
  const MarginSolution sol = class_max_margin(pts);
  CHECK(sol.gamma == doctest::Approx(0.894427).epsilon(1e-5));
  CHECK(sol.u[0] == doctest::Approx(0.447214).epsilon(1e-5));
  CHECK(sol.u[1] == doctest::Approx(0.894427).epsilon(1e-5));
}

TEST_CASE("oracle equivalence against dense grid search in D = 2 and 3") {
  Rng rng(7);
  for (int rep = 0; rep < 50; ++rep) {
    const int dim = 2 + static_cast<int>(rng.below(2));
    const int count = 1 + static_cast<int>(rng.below(8));
    const Matrix pts = positively_correlated_set(dim, count, rng);
    const MarginSolution sol = class_max_margin(pts);
    const testing::GridMargin grid = testing::grid_max_margin(pts);
    CHECK(std::abs(sol.gamma - grid.gamma) <= 1e-4);
    CHECK(sol.u.dot(grid.u) >= 1.0 - 1e-6);
    CHECK(sol.gap <= 1e-9);
  }
}

TEST_CASE("support weights are a convex combination reproducing the solution") {
  Rng rng(19);
  for (int rep = 0; rep < 25; ++rep) {
    const Matrix pts = positively_correlated_set(3, 6, rng);
    const MarginSolution sol = class_max_margin(pts);
    CHECK(sol.support_weights.minCoeff() >= 0.0);
    CHECK(sol.support_weights.sum() == doctest::Approx(1.0).epsilon(1e-12));
    const Vector p = pts * sol.support_weights;
    CHECK((p - sol.gamma * sol.u).norm() <= 1e-9);
  }
}

TEST_CASE("scaling covariance: gamma scales, u stays") {
  Rng rng(23);
  const Matrix pts = positively_correlated_set(3, 5, rng);
  const MarginSolution base = class_max_margin(pts);
  const MarginSolution scaled = class_max_margin(4.0 * pts);
  CHECK(scaled.gamma == doctest::Approx(4.0 * base.gamma).epsilon(1e-9));
  CHECK(scaled.u.dot(base.u) >= 1.0 - 1e-10);
}

TEST_CASE("antipodal points collapse the hull onto zero and are rejected") {
  Matrix pts(2, 2);
  pts << 1, -1, 0, 0;
  CHECK_THROWS_AS(class_max_margin(pts), DataError);
}

TEST_CASE("margin scales") {
  SUBCASE("equal binary margins give 1/2") {
    Vector g(2);
    g << 1, 1;
    const Vector s = margin_scales(g);
    CHECK(s[0] == doctest::Approx(0.5));
    CHECK(s[1] == doctest::Approx(0.5));
  }
  SUBCASE("K = 3 with unit margins gives 1/sqrt(6)") {
    Vector g(3);
    g << 1, 1, 1;
    const Vector s = margin_scales(g);
    for (int k = 0; k < 3; ++k) CHECK(s[k] == doctest::Approx(0.408248).epsilon(1e-6));
  }
  SUBCASE("gamma = (1, 2): direct scalar evaluation of the formula") {
    Vector g(2);
    g << 1, 2;
    const Vector s = margin_scales(g);
    // Independent plug-in: inv = (1, 0.5), 2*sum(inv) = 3.
    CHECK(s[0] == doctest::Approx(std::sqrt(1.0 / 3.0)).epsilon(1e-12));
    CHECK(s[1] == doctest::Approx(std::sqrt(0.5 / 3.0)).epsilon(1e-12));
  }
  SUBCASE("normalization identity s_k^2 * 2 sum(1/gamma) = 1/gamma_k") {
    Rng rng(5);
    for (int rep = 0; rep < 20; ++rep) {
      Vector g(4);
      for (int k = 0; k < 4; ++k) g[k] = 0.1 + 3.0 * rng.uniform01();
      const Vector s = margin_scales(g);
      double inv_sum = 0.0;
      for (int k = 0; k < 4; ++k) inv_sum += 1.0 / g[k];
      for (int k = 0; k < 4; ++k) {
        CHECK(s[k] * s[k] * 2.0 * inv_sum == doctest::Approx(1.0 / g[k]).epsilon(1e-12));
      }
    }
  }
  SUBCASE("non-positive gamma rejected") {
    Vector g(2);
    g << 1, 0;
    CHECK_THROWS_AS(margin_scales(g), DataError);
  }
}

TEST_CASE("nnls solves small systems with active constraints") {
  Matrix a(3, 2);
  a << 1, 0, 0, 1, 0, 0;
  Vector b(3);
  b << 2, -1, 0;  // unconstrained optimum has x2 < 0; NNLS clamps it
  const Vector x = nnls(a, b);
  CHECK(x[0] == doctest::Approx(2.0).epsilon(1e-10));
  CHECK(x[1] == doctest::Approx(0.0));
}

namespace {

// The closed-form limit direction on the K = 3 singleton simplex.
struct ClosedForm {
  Dataset data;
  NetParams direction;
  std::vector<int> partition;
  MarginCertificate cert;
};

ClosedForm k3_closed_form() {
  ClosedForm cf;
  GenerateConfig gc;
  gc.num_classes = 3;
  gc.dim = 3;
  gc.points_per_class = 1;
  gc.seed = 2;
  cf.data = generate_separable(gc);
  cf.cert = compute_margin_certificate(cf.data);
  const Matrix frame = pseudo_label_frame(3);
  cf.direction.loss_kind = LossKind::CrossEntropy;
  cf.direction.W = Matrix(3, 3);
  cf.direction.V = Matrix(3, 3);
  for (int k = 0; k < 3; ++k) {
    cf.direction.W.col(k) = cf.cert.s[k] * cf.cert.per_class[k].u;
    cf.direction.V.col(k) = cf.cert.s[k] * frame.col(k);
    cf.partition.push_back(k);
  }
  return cf;
}

}  // namespace

TEST_CASE("closed-form limit is a KKT point of the per-class margin problem") {
  const ClosedForm cf = k3_closed_form();
  // The construction has unit Frobenius norm by the scale identity.
  CHECK(std::sqrt(cf.direction.W.squaredNorm() + cf.direction.V.squaredNorm()) ==
        doctest::Approx(1.0).epsilon(1e-12));
  const KktReport rep = kkt_residual(cf.direction, cf.data, cf.partition);
  CHECK(rep.rescaled);
  CHECK(rep.feasibility_violations_total == 0);
  CHECK(rep.stationarity_max <= 1e-8);
  for (const auto& c : rep.classes) {
    CHECK(c.comp_slack_max <= 1e-8);
    CHECK(c.active_constraints > 0);
  }
}

TEST_CASE("binary antipodal closed form is a KKT point") {
  Matrix pts(2, 2);
  pts << 1, -1, 0, 0;
  const Dataset data = make_dataset(pts, {0, 1});
  NetParams dir;
  dir.loss_kind = LossKind::Exponential;
  dir.W = Matrix(2, 2);
  dir.W << 0.5, -0.5, 0, 0;
  dir.V = Matrix(1, 2);
  dir.V << 0.5, -0.5;
  const KktReport rep = kkt_residual(dir, data, {0, 1});
  CHECK(rep.rescaled);
  CHECK(rep.stationarity_max <= 1e-8);
  CHECK(rep.feasibility_violations_total == 0);
}

TEST_CASE("a random direction reports large feasibility violations") {
  const ClosedForm cf = k3_closed_form();
  Rng rng(11);
  NetParams dir;
  dir.loss_kind = LossKind::CrossEntropy;
  dir.W = Matrix(3, 3);
  dir.V = Matrix(3, 3);
  for (int j = 0; j < 3; ++j) {
    dir.W.col(j) = rng.normal_vector(3);
    dir.V.col(j) = rng.normal_vector(3);
  }
  const double fro = std::sqrt(dir.W.squaredNorm() + dir.V.squaredNorm());
  dir.W /= fro;
  dir.V /= fro;
  const KktReport rep = kkt_residual(dir, cf.data, cf.partition);
  // Either the margins are not even positive, or violations are large.
  if (rep.rescaled) {
    CHECK(rep.feasibility_violations_total == 0);  // rescale pins min margin at 1
  } else {
    CHECK(rep.max_feasibility_violation >= 0.5);
  }
}

TEST_CASE("certificate ties the pieces together on a generated dataset") {
  GenerateConfig gc;
  gc.num_classes = 3;
  gc.dim = 5;
  gc.points_per_class = 12;
  gc.cone_half_angle = 0.15;
  gc.norm_lo = 0.9;
  gc.norm_hi = 1.1;
  gc.seed = 55;
  const Dataset data = generate_separable(gc);
  const MarginCertificate cert = compute_margin_certificate(data);
  REQUIRE(cert.per_class.size() == 3);
  for (int k = 0; k < 3; ++k) {
    CHECK(cert.per_class[k].gap <= 1e-9);
    CHECK(cert.gammas[k] > 0.0);
    CHECK(cert.per_class[k].u.norm() == doctest::Approx(1.0).epsilon(1e-10));
    // Margin is attained over the class: min_i <x_i, u> == gamma - gap.
    double min_dot = std::numeric_limits<double>::infinity();
    for (int i : data.class_indices[k]) {
      min_dot = std::min(min_dot, data.points.col(i).dot(cert.per_class[k].u));
    }
    CHECK(min_dot >= cert.gammas[k] - cert.per_class[k].gap - 1e-12);
  }
}
