#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <chrono>
#include <cmath>

#include "dentseg/preprocess.hpp"
#include "dentseg/synth.hpp"

using namespace dentseg;

namespace {

SynthConfig quiet_config() {
  SynthConfig cfg;
  cfg.width = 32;
  cfg.height = 16;
  cfg.world_x = 100.0;
  cfg.world_y = 50.0;
  cfg.sigma_w = 0.0;
  cfg.xy_jitter = 0.0;
  cfg.rot_limit_deg = 0.0;
  cfg.curvature = {0.0, 0.0};
  return cfg;
}

}  // namespace

TEST_CASE("unit dent profile hits -1/e at the centre and 0 at the rim") {
  CHECK(unit_dent(0.0) == doctest::Approx(-0.36787944117144233).epsilon(1e-14));
  CHECK(unit_dent(1.0) == 0.0);
  CHECK(unit_dent(-1.0) == 0.0);
  CHECK(unit_dent(4.2) == 0.0);
  CHECK(unit_dent(0.5) == doctest::Approx(-0.26359713811572677).epsilon(1e-14));
}

TEST_CASE("dent field is negative under the support, zero outside, peak = depth") {
  DentSpec spec;
  spec.center_x = 10.0;
  spec.center_y = -5.0;
  spec.scale_x = 30.0;
  spec.scale_y = 20.0;
  spec.depth = 2.0;
  spec.theta = 0.7;

  CHECK(dent_field(spec, spec.center_x, spec.center_y) == doctest::Approx(-2.0).epsilon(1e-12));
  CHECK(dent_covers(spec, spec.center_x, spec.center_y));

  // Along the unrotated local x-axis direction: the rim sits scale_x away.
  const double rim_x = spec.center_x + spec.scale_x * std::cos(spec.theta);
  const double rim_y = spec.center_y + spec.scale_x * std::sin(spec.theta);
  CHECK(dent_field(spec, rim_x, rim_y) == 0.0);
  CHECK_FALSE(dent_covers(spec, rim_x, rim_y));
  CHECK(dent_field(spec, spec.center_x + 100, spec.center_y + 100) == 0.0);

  // Strictly negative inside and monotonically shallower away from the centre.
  double prev = -std::numeric_limits<double>::infinity();
  for (double f : {0.0, 0.2, 0.4, 0.6, 0.8, 0.95, 0.999}) {
    const double v = dent_field(spec, spec.center_x + f * spec.scale_x * std::cos(spec.theta),
                                spec.center_y + f * spec.scale_x * std::sin(spec.theta));
    CHECK(v < 0.0);
    CHECK(v > prev);
    prev = v;
  }
}

TEST_CASE("dent field fades smoothly into the rim") {
  DentSpec spec;
  spec.scale_x = spec.scale_y = 1.0;
  spec.depth = 1.0;
  // Numerical radial derivative near r = 1 tends to zero (smooth edges).
  const double h = 5e-4;
  const double d1 = (dent_field(spec, 0.999 + h, 0) - dent_field(spec, 0.999 - h, 0)) / (2 * h);
  CHECK(std::abs(d1) < 1e-2 * spec.depth);
}

TEST_CASE("base surface with zero curvature is exactly flat") {
  SynthConfig cfg = quiet_config();
  BaseSurfaceParams params;
  params.alpha_range = params.beta_range = {0.0, 0.0};
  Rng rng(1);
  const SurfaceGrid g = base_surface(params, cfg, rng);
  CHECK(params.alpha == 0.0);
  CHECK(params.beta == 0.0);
  CHECK((g.z == 0.0f).all());
}

TEST_CASE("base surface evaluates the parabola at the lattice points") {
  SynthConfig cfg = quiet_config();
  cfg.world_x = 200.0;  // lattice reaches x = ±100 exactly
  cfg.world_y = 100.0;
  BaseSurfaceParams params;
  params.alpha_range = {1e-3, 1e-3};
  params.beta_range = {0.0, 0.0};
  Rng rng(1);
  const SurfaceGrid g = base_surface(params, cfg, rng);
  CHECK(params.alpha == doctest::Approx(1e-3));
  const int last = cfg.width - 1;
  CHECK(g.x(0, last) == doctest::Approx(100.0).epsilon(1e-9));
  CHECK(g.z(0, last) == doctest::Approx(10.0).epsilon(1e-5));  // z = alpha·x²
  // The formula holds cell-wise for whatever x the lattice carries.
  for (int ix = 0; ix < cfg.width; ix += 5) {
    const double x = g.x(3, ix);
    CHECK(g.z(3, ix) == doctest::Approx(1e-3 * x * x).epsilon(1e-5));
  }
}

TEST_CASE("sampled curvature is uniform over its range") {
  SynthConfig cfg = quiet_config();
  BaseSurfaceParams params;
  params.alpha_range = {-5e-4, 5e-4};
  params.beta_range = {0.0, 0.0};
  cfg.width = 16;
  cfg.height = 16;
  Rng rng(99);
  std::vector<double> draws;
  for (int i = 0; i < 1000; ++i) {
    base_surface(params, cfg, rng);
    draws.push_back(params.alpha);
  }
  // Kolmogorov–Smirnov distance against the uniform CDF on [-5e-4, 5e-4].
  std::sort(draws.begin(), draws.end());
  double ks = 0.0;
  for (size_t i = 0; i < draws.size(); ++i) {
    const double cdf = (draws[i] + 5e-4) / 1e-3;
    ks = std::max(ks, std::abs(cdf - (i + 1.0) / draws.size()));
    ks = std::max(ks, std::abs(cdf - i / static_cast<double>(draws.size())));
  }
  CHECK(ks < 0.05);  // ~1.36/sqrt(1000) at the 5% level
  CHECK(draws.front() >= -5e-4);
  CHECK(draws.back() <= 5e-4);
}

TEST_CASE("spawn_dents honours the spawn law edge cases") {
  SynthConfig cfg = quiet_config();
  Rng rng(3);

  cfg.dent_prob = 0.0;
  for (int i = 0; i < 200; ++i) CHECK(spawn_dents(cfg, rng).empty());

  cfg.dent_prob = 1.0;
  cfg.dent_decay = 0.0;
  for (int i = 0; i < 200; ++i) CHECK(spawn_dents(cfg, rng).size() == 1);
}

TEST_CASE("spawn_dents matches the p·q^k law over 100k draws") {
  SynthConfig cfg = quiet_config();
  cfg.dent_prob = 0.8;
  cfg.dent_decay = 0.5;
  Rng rng(11);
  std::array<long, 8> histogram{};
  const int trials = 100000;
  for (int i = 0; i < trials; ++i) {
    const size_t n = std::min<size_t>(spawn_dents(cfg, rng).size(), histogram.size() - 1);
    histogram[n]++;
  }
  // P(0)=1-p, P(1)=p(1-pq), P(2)=p·pq·(1-pq²)=0.256
  CHECK(std::abs(histogram[0] / double(trials) - 0.2) < 0.01);
  CHECK(std::abs(histogram[1] / double(trials) - 0.48) < 0.01);
  CHECK(std::abs(histogram[2] / double(trials) - 0.256) < 0.01);
}

TEST_CASE("drawn dent parameters stay inside the configured ranges") {
  SynthConfig cfg = quiet_config();
  cfg.dent_prob = 1.0;
  cfg.dent_decay = 0.5;
  Rng rng(5);
  for (int i = 0; i < 500; ++i) {
    for (const DentSpec& d : spawn_dents(cfg, rng)) {
      CHECK(d.scale_x >= cfg.dent_extent.lo / 2);
      CHECK(d.scale_x <= cfg.dent_extent.hi / 2);
      CHECK(d.depth >= cfg.dent_depth.lo);
      CHECK(d.depth <= cfg.dent_depth.hi);
      CHECK(std::abs(d.center_x) <= cfg.world_x / 2);
      CHECK(std::abs(d.center_y) <= cfg.world_y / 2);
    }
  }
}

TEST_CASE("compose with no dents and no noise reproduces the base exactly") {
  SynthConfig cfg = quiet_config();
  BaseSurfaceParams params;
  params.alpha_range = {1e-4, 1e-4};
  params.beta_range = {0.0, 0.0};
  Rng rng(2);
  const SurfaceGrid base = base_surface(params, cfg, rng);
  const LabelledSample sample = compose_sample(base, {}, cfg, rng);
  CHECK((sample.surface.z == base.z).all());
  CHECK((sample.truth.values == 0).all());
}

TEST_CASE("a single dent deforms exactly by its field") {
  SynthConfig cfg = quiet_config();
  BaseSurfaceParams params;
  Rng rng(2);
  const SurfaceGrid base = base_surface(params, cfg, rng);

  DentSpec dent;
  dent.center_x = 5.0;
  dent.center_y = 0.0;
  dent.scale_x = 20.0;
  dent.scale_y = 12.0;
  dent.depth = 1.5;
  dent.theta = 0.3;
  const LabelledSample sample = compose_sample(base, {dent}, cfg, rng);

  for (int iy = 0; iy < cfg.height; ++iy) {
    for (int ix = 0; ix < cfg.width; ++ix) {
      const double field = dent_field(dent, base.x(iy, ix), base.y(iy, ix));
      const float expected = base.z(iy, ix) + static_cast<float>(field);
      CHECK(sample.surface.z(iy, ix) == doctest::Approx(expected).epsilon(1e-6));
      CHECK(sample.truth.values(iy, ix) ==
            (dent_covers(dent, base.x(iy, ix), base.y(iy, ix)) ? 1 : 0));
    }
  }
}

TEST_CASE("two disjoint dents produce the union of supports") {
  SynthConfig cfg = quiet_config();
  BaseSurfaceParams params;
  Rng rng(4);
  const SurfaceGrid base = base_surface(params, cfg, rng);

  DentSpec left, right;
  left.center_x = -30.0;
  left.scale_x = left.scale_y = 12.0;
  left.depth = 1.0;
  right.center_x = 30.0;
  right.scale_x = right.scale_y = 10.0;
  right.depth = 2.0;
  const LabelledSample sample = compose_sample(base, {left, right}, cfg, rng);

  for (int iy = 0; iy < cfg.height; ++iy) {
    for (int ix = 0; ix < cfg.width; ++ix) {
      const double x = base.x(iy, ix), y = base.y(iy, ix);
      const bool in_left = dent_covers(left, x, y);
      const bool in_right = dent_covers(right, x, y);
      CHECK(sample.truth.values(iy, ix) == ((in_left || in_right) ? 1 : 0));
      // Disjoint supports: the covering dent alone contributes.
      const double expected =
          in_left ? dent_field(left, x, y) : (in_right ? dent_field(right, x, y) : 0.0);
      CHECK(sample.surface.z(iy, ix) - base.z(iy, ix) ==
            doctest::Approx(expected).epsilon(1e-5));
    }
  }
}

TEST_CASE("overlapping dents keep the deepest deformation per cell") {
  SynthConfig cfg = quiet_config();
  BaseSurfaceParams params;
  Rng rng(4);
  const SurfaceGrid base = base_surface(params, cfg, rng);

  DentSpec shallow, deep;
  shallow.scale_x = shallow.scale_y = 25.0;
  shallow.depth = 0.5;
  deep.scale_x = deep.scale_y = 10.0;
  deep.depth = 3.0;
  const LabelledSample sample = compose_sample(base, {shallow, deep}, cfg, rng);

  for (int iy = 0; iy < cfg.height; ++iy) {
    for (int ix = 0; ix < cfg.width; ++ix) {
      const double x = base.x(iy, ix), y = base.y(iy, ix);
      const double expected =
          std::min(dent_field(shallow, x, y), dent_field(deep, x, y));  // both <= 0
      CHECK(sample.surface.z(iy, ix) - base.z(iy, ix) ==
            doctest::Approx(expected).epsilon(1e-5));
    }
  }
}

TEST_CASE("zero-angle rotation is the identity") {
  const LabelledSample sample = generate_sample(quiet_config(), 1, 0);
  const LabelledSample same = rotate_sample(sample, Eigen::Vector3d::Zero());
  CHECK((same.surface.x == sample.surface.x).all());
  CHECK((same.surface.y == sample.surface.y).all());
  CHECK((same.surface.z == sample.surface.z).all());
}

TEST_CASE("rotation followed by its inverse returns the original points") {
  // Small world so 32-bit point storage stays well inside the tolerance.
  SynthConfig cfg = quiet_config();
  cfg.world_x = 2.0;
  cfg.world_y = 1.0;
  const LabelledSample sample = generate_sample(cfg, 1, 0);

  const Eigen::Vector3d angles(9.0, -7.0, 13.0);
  LabelledSample turned = rotate_sample(sample, angles);
  // Rz·Ry·Rx composition inverts as Rx(-a)·Ry(-b)·Rz(-c).
  turned = rotate_sample(turned, {0.0, 0.0, -angles.z()});
  turned = rotate_sample(turned, {0.0, -angles.y(), 0.0});
  turned = rotate_sample(turned, {-angles.x(), 0.0, 0.0});

  CHECK((turned.surface.x - sample.surface.x).abs().maxCoeff() <= 1e-6f);
  CHECK((turned.surface.y - sample.surface.y).abs().maxCoeff() <= 1e-6f);
  CHECK((turned.surface.z - sample.surface.z).abs().maxCoeff() <= 1e-6f);
}

TEST_CASE("rotation preserves pairwise distances and the ground truth") {
  SynthConfig cfg = quiet_config();
  cfg.dent_prob = 1.0;
  const LabelledSample sample = generate_sample(cfg, 7, 0);
  const LabelledSample turned = rotate_sample(sample, {12.0, -9.0, 31.0});

  CHECK((turned.truth.values == sample.truth.values).all());

  Rng rng(13);
  std::uniform_int_distribution<int> px(0, cfg.width - 1), py(0, cfg.height - 1);
  for (int k = 0; k < 300; ++k) {
    const int ax = px(rng), ay = py(rng), bx = px(rng), by = py(rng);
    if (ax == bx && ay == by) continue;
    const double before =
        (sample.surface.point(ax, ay) - sample.surface.point(bx, by)).cast<double>().norm();
    const double after =
        (turned.surface.point(ax, ay) - turned.surface.point(bx, by)).cast<double>().norm();
    CHECK(std::abs(after - before) <= 1e-6 * before);  // 32-bit storage floor
  }
}

TEST_CASE("a clean parabola sample sits inside the quadric model class") {
  SynthConfig cfg = quiet_config();
  cfg.world_x = 500.0;
  cfg.world_y = 330.0;
  cfg.width = 160;
  cfg.height = 96;
  cfg.curvature = {-2e-4, 2e-4};
  cfg.dent_prob = 0.0;
  const LabelledSample sample = generate_sample(cfg, 21, 0);
  const Preprocessed pre = preprocess(sample.surface);
  CHECK(pre.residuals.values.abs().maxCoeff() <= 1e-6f);
}

TEST_CASE("generation is deterministic per seed and varies across seeds") {
  SynthConfig cfg = quiet_config();
  cfg.dent_prob = 0.9;
  cfg.sigma_w = 0.4;
  cfg.xy_jitter = 0.25;
  cfg.rot_limit_deg = 10.0;

  const LabelledSample a = generate_sample(cfg, 1234, 17);
  const LabelledSample b = generate_sample(cfg, 1234, 17);
  CHECK((a.surface.x == b.surface.x).all());
  CHECK((a.surface.y == b.surface.y).all());
  CHECK((a.surface.z == b.surface.z).all());
  CHECK((a.truth.values == b.truth.values).all());

  const LabelledSample c = generate_sample(cfg, 999, 17);
  CHECK((a.surface.z != c.surface.z).any());
}

TEST_CASE("dataset generation is order-independent and steadily fast") {
  SynthConfig cfg = quiet_config();
  cfg.width = 160;
  cfg.height = 96;
  cfg.world_x = 500.0;
  cfg.world_y = 330.0;
  cfg.dent_prob = 0.8;
  cfg.sigma_w = 1.0;
  cfg.xy_jitter = 0.25;
  cfg.rot_limit_deg = 15.0;
  cfg.curvature = {-5e-4, 5e-4};

  // Per-index substreams: sample 5 regenerated in isolation matches the
  // sample 5 of the streamed dataset.
  std::vector<LabelledSample> stream;
  const auto t0 = std::chrono::steady_clock::now();
  generate_dataset(cfg, 300, 77, [&](int, LabelledSample&& s) { stream.push_back(std::move(s)); });
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  REQUIRE(stream.size() == 300);
  const LabelledSample solo = generate_sample(cfg, 77, 5);
  CHECK((stream[5].surface.z == solo.surface.z).all());
  CHECK((stream[5].truth.values == solo.truth.values).all());
  CHECK(seconds < 30.0);  // 2000 must stay under a minute; 300 well under half

  CHECK_THROWS_AS(generate_dataset(cfg, 0, 1, [](int, LabelledSample&&) {}),
                  std::invalid_argument);
}

TEST_CASE("config validation rejects out-of-range fields") {
  SynthConfig cfg;  // defaults are valid
  CHECK_NOTHROW(cfg.validate());
  SynthConfig bad = cfg;
  bad.width = 100;  // not a multiple of 16
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.dent_prob = 1.5;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.dent_decay = 1.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.sigma_w = -0.1;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}
