#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Geometry>

#include <cmath>
#include <random>

#include "dentseg/preprocess.hpp"
#include "dentseg/rng.hpp"

using namespace dentseg;

namespace {

template <typename S, typename F>
SurfaceGridT<S> lattice(int w, int h, double pitch, F&& zfn) {
  SurfaceGridT<S> g(w, h, static_cast<S>(pitch), static_cast<S>(pitch));
  const double x0 = -0.5 * (w - 1) * pitch;
  const double y0 = -0.5 * (h - 1) * pitch;
  for (int iy = 0; iy < h; ++iy) {
    for (int ix = 0; ix < w; ++ix) {
      const double x = x0 + ix * pitch;
      const double y = y0 + iy * pitch;
      g.x(iy, ix) = static_cast<S>(x);
      g.y(iy, ix) = static_cast<S>(y);
      g.z(iy, ix) = static_cast<S>(zfn(x, y));
    }
  }
  return g;
}

template <typename S>
SurfaceGridT<S> rotated(const SurfaceGridT<S>& g, const Eigen::Matrix3d& r) {
  SurfaceGridT<S> out = g;
  for (int iy = 0; iy < g.height(); ++iy) {
    for (int ix = 0; ix < g.width(); ++ix) {
      const Eigen::Vector3d p =
          r * Eigen::Vector3d(g.x(iy, ix), g.y(iy, ix), g.z(iy, ix));
      out.x(iy, ix) = static_cast<S>(p.x());
      out.y(iy, ix) = static_cast<S>(p.y());
      out.z(iy, ix) = static_cast<S>(p.z());
    }
  }
  return out;
}

Eigen::Vector3d random_unit_normal(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Vector3d v;
  do {
    v << n(rng), n(rng), n(rng);
  } while (v.norm() < 1e-6);
  v.normalize();
  if (v.z() < -0.9) v.z() = std::abs(v.z());  // stay away from the excluded antiparallel pole
  return v.normalized();
}

}  // namespace

TEST_CASE("fit_plane on a level surface returns the z axis") {
  const auto g = lattice<float>(12, 9, 1.0, [](double, double) { return 5.0; });
  const PlaneFit fit = fit_plane(g);
  CHECK(fit.normal.isApprox(Eigen::Vector3d::UnitZ(), 1e-12));
  CHECK(fit.offset == doctest::Approx(5.0).epsilon(1e-9));
}

TEST_CASE("fit_plane on z = x recovers the 45-degree normal") {
  const auto g = lattice<double>(16, 16, 1.0, [](double x, double) { return x; });
  const PlaneFit fit = fit_plane(g);
  const Eigen::Vector3d expected = Eigen::Vector3d(-1, 0, 1).normalized();
  CHECK((fit.normal - expected).norm() < 1e-9);
}

TEST_CASE("fit_plane rejects collinear points") {
  SurfaceGridD g(4, 1);
  for (int ix = 0; ix < 4; ++ix) {
    g.x(0, ix) = ix;
    g.y(0, ix) = 2.0 * ix;
    g.z(0, ix) = -ix;
  }
  CHECK_THROWS_WITH_AS(fit_plane(g), doctest::Contains("collinear"), std::runtime_error);
}

TEST_CASE("fit_plane needs at least 3 points") {
  SurfaceGridD g(2, 1);
  CHECK_THROWS_AS(fit_plane(g), std::runtime_error);
}

TEST_CASE("alignment_rotation of the z axis is the identity") {
  const Eigen::Matrix3d r = alignment_rotation(Eigen::Vector3d::UnitZ());
  CHECK((r - Eigen::Matrix3d::Identity()).norm() == 0.0);
}

TEST_CASE("alignment_rotation of the x axis matches the closed form") {
  const Eigen::Matrix3d r = alignment_rotation(Eigen::Vector3d::UnitX());
  Eigen::Matrix3d expected;
  expected << 0, 0, 1, 0, 1, 0, -1, 0, 0;
  CHECK((r - expected).norm() < 1e-15);
  CHECK((r * Eigen::Vector3d::UnitZ() - Eigen::Vector3d::UnitX()).norm() < 1e-15);
}

TEST_CASE("alignment_rotation maps z onto 1000 random normals orthonormally") {
  Rng rng(42);
  for (int trial = 0; trial < 1000; ++trial) {
    const Eigen::Vector3d n = random_unit_normal(rng);
    const Eigen::Matrix3d r = alignment_rotation(n);
    CHECK((r * Eigen::Vector3d::UnitZ() - n).norm() <= 1e-9);
    CHECK((r.transpose() * r - Eigen::Matrix3d::Identity()).norm() <= 1e-9);
    CHECK(r.determinant() == doctest::Approx(1.0).epsilon(1e-9));
    // Independent oracle: quaternion construction of the same minimal rotation.
    const Eigen::Matrix3d oracle =
        Eigen::Quaterniond::FromTwoVectors(Eigen::Vector3d::UnitZ(), n).toRotationMatrix();
    CHECK((r - oracle).norm() <= 1e-9);
  }
}

TEST_CASE("alignment_rotation rejects antiparallel and non-unit normals") {
  CHECK_THROWS_AS(alignment_rotation(-Eigen::Vector3d::UnitZ()), std::invalid_argument);
  CHECK_THROWS_AS(alignment_rotation(Eigen::Vector3d(0, 0, 2)), std::invalid_argument);
}

TEST_CASE("canonicalize leaves an already canonical grid unchanged") {
  const auto g =
      lattice<float>(20, 12, 2.0, [](double x, double y) { return 1e-4 * x * x - 5e-5 * y * y; });
  const SurfaceGrid c = canonicalize(g);
  CHECK((c.x - g.x).abs().maxCoeff() <= 1e-9f);
  CHECK((c.y - g.y).abs().maxCoeff() <= 1e-9f);
  CHECK((c.z - g.z).abs().maxCoeff() <= 1e-9f);
}

TEST_CASE("canonicalize realigns a known rotation back to the z axis") {
  const auto base =
      lattice<double>(24, 16, 1.5, [](double x, double y) { return 2e-4 * (x * x + y * y); });
  const Eigen::Matrix3d r = (Eigen::AngleAxisd(0.20, Eigen::Vector3d::UnitX()) *
                             Eigen::AngleAxisd(-0.15, Eigen::Vector3d::UnitY()))
                                .toRotationMatrix();
  const SurfaceGridD tilted = rotated(base, r);
  const SurfaceGridD canon = canonicalize(tilted);
  const PlaneFit refit = fit_plane(canon);
  CHECK(refit.normal.dot(Eigen::Vector3d::UnitZ()) >= 1.0 - 1e-9);
}

TEST_CASE("canonicalize preserves pairwise distances") {
  const auto base =
      lattice<double>(10, 8, 1.0, [](double x, double y) { return 0.01 * x + 0.02 * y; });
  const Eigen::Matrix3d r =
      Eigen::AngleAxisd(0.3, Eigen::Vector3d(1, 2, 3).normalized()).toRotationMatrix();
  const SurfaceGridD tilted = rotated(base, r);
  const SurfaceGridD canon = canonicalize(tilted);
  Rng rng(7);
  std::uniform_int_distribution<int> px(0, 9), py(0, 7);
  for (int k = 0; k < 200; ++k) {
    const int ax = px(rng), ay = py(rng), bx = px(rng), by = py(rng);
    if (ax == bx && ay == by) continue;
    const double before = (tilted.point(ax, ay) - tilted.point(bx, by)).norm();
    const double after = (canon.point(ax, ay) - canon.point(bx, by)).norm();
    CHECK(std::abs(after - before) <= 1e-9 * before);
  }
}

TEST_CASE("fit_quadric recovers exact coefficients to 1e-9 relative") {
  const QuadricCoeffs truth{1e-3, 2e-3, 3e-3, 4e-3, 5e-3, 6e-3};
  const auto g = lattice<double>(40, 24, 4.0,
                                 [&](double x, double y) { return truth.evaluate(x, y); });
  const QuadricCoeffs fit = fit_quadric(g);
  CHECK(std::abs(fit.a - truth.a) <= 1e-9 * std::abs(truth.a));
  CHECK(std::abs(fit.b - truth.b) <= 1e-9 * std::abs(truth.b));
  CHECK(std::abs(fit.c - truth.c) <= 1e-9 * std::abs(truth.c));
  CHECK(std::abs(fit.d - truth.d) <= 1e-9 * std::abs(truth.d));
  CHECK(std::abs(fit.e - truth.e) <= 1e-9 * std::abs(truth.e));
  CHECK(std::abs(fit.f - truth.f) <= 1e-9 * std::abs(truth.f));
}

TEST_CASE("fit_quadric on a plane leaves the quadratic terms at zero") {
  const auto g =
      lattice<double>(20, 20, 1.0, [](double x, double y) { return 2.0 + 0.01 * x - 0.02 * y; });
  const QuadricCoeffs fit = fit_quadric(g);
  CHECK(std::abs(fit.d) <= 1e-9);
  CHECK(std::abs(fit.e) <= 1e-9);
  CHECK(std::abs(fit.f) <= 1e-9);
}

TEST_CASE("fit_quadric rejects underdetermined input") {
  SurfaceGridD g(5, 1);
  for (int ix = 0; ix < 5; ++ix) {
    g.x(0, ix) = ix;
    g.y(0, ix) = ix * ix * 0.1;
    g.z(0, ix) = 1.0;
  }
  CHECK_THROWS_AS(fit_quadric(g), std::runtime_error);
}

TEST_CASE("fit_quadric rejects a rank-deficient design") {
  // All points share one x: the x and x² columns are dependent with 1.
  SurfaceGridD g(1, 12);
  for (int iy = 0; iy < 12; ++iy) {
    g.x(iy, 0) = 3.0;
    g.y(iy, 0) = iy;
    g.z(iy, 0) = iy * 0.5;
  }
  CHECK_THROWS_WITH_AS(fit_quadric(g), doctest::Contains("rank-deficient"), std::runtime_error);
}

TEST_CASE("residuals vanish on data drawn from the quadric") {
  const QuadricCoeffs q{0.5, -1e-3, 2e-3, 1e-4, -2e-4, 3e-4};
  const auto g = lattice<double>(30, 20, 2.0, [&](double x, double y) { return q.evaluate(x, y); });
  const ResidualGridD r = residuals(g, q);
  CHECK(r.values.abs().maxCoeff() <= 1e-9);
}

TEST_CASE("residual sum over the fitted set is zero up to solver tolerance") {
  // Surface outside the model class (cubic term), so residuals are nonzero
  // but must still sum to ~0 because the basis contains the intercept.
  const auto g = lattice<double>(32, 24, 1.0,
                                 [](double x, double y) { return 1e-5 * x * x * x + 0.05 * y; });
  const QuadricCoeffs q = fit_quadric(g);
  const ResidualGridD r = residuals(g, q);
  CHECK(r.values.abs().maxCoeff() > 1e-6);  // model class genuinely exceeded
  CHECK(std::abs(r.values.sum()) <= 1e-6 * r.values.size());
}

TEST_CASE("preprocess of a noiseless parabola yields a near-zero residual matrix") {
  const auto g =
      lattice<float>(64, 48, 5.0, [](double x, double y) { return 2e-4 * x * x + 1e-4 * y * y; });
  const Preprocessed pre = preprocess(g);
  CHECK(pre.residuals.values.abs().maxCoeff() <= 1e-6f);
  CHECK(pre.source_width == 64);
  CHECK(pre.source_height == 48);
}

TEST_CASE("preprocess is invariant to a pose rotation within scan limits") {
  // A curved surface with a dent-like bump; the residual images before and
  // after a rigid world rotation must agree once canonicalized.
  const auto g = lattice<float>(48, 32, 6.0, [](double x, double y) {
    const double r2 = (x * x + y * y) / (60.0 * 60.0);
    const double bump = r2 < 1.0 ? -2.0 * std::exp(-1.0 / (1.0 - r2)) : 0.0;
    return 3e-4 * x * x - 2e-4 * y * y + bump;
  });
  const Eigen::Matrix3d r = (Eigen::AngleAxisd(10.0 * M_PI / 180, Eigen::Vector3d::UnitX()) *
                             Eigen::AngleAxisd(-12.0 * M_PI / 180, Eigen::Vector3d::UnitY()) *
                             Eigen::AngleAxisd(8.0 * M_PI / 180, Eigen::Vector3d::UnitZ()))
                                .toRotationMatrix();
  const Preprocessed straight = preprocess(g);
  const Preprocessed posed = preprocess(rotated(g, r));
  CHECK((straight.residuals.values - posed.residuals.values).abs().maxCoeff() <= 1e-3f);
}
