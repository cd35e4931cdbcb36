#include "dentseg/synth.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dentseg {

namespace {

constexpr double kEuler = 2.718281828459045235360287471352662498;

// Dent-local normalized coordinates: shift to centre, rotate by -theta,
// divide by the per-axis half-extents.
inline double dent_r2(const DentSpec& s, double x, double y) {
  const double dx = x - s.center_x;
  const double dy = y - s.center_y;
  const double ct = std::cos(s.theta);
  const double st = std::sin(s.theta);
  const double u = (ct * dx + st * dy) / s.scale_x;
  const double v = (-st * dx + ct * dy) / s.scale_y;
  return u * u + v * v;
}

}  // namespace

void SynthConfig::validate() const {
  if (width < 16 || height < 16 || width % 16 != 0 || height % 16 != 0) {
    throw std::invalid_argument("SynthConfig: grid dimensions must be positive multiples of 16");
  }
  if (world_x <= 0 || world_y <= 0) {
    throw std::invalid_argument("SynthConfig: world size must be positive");
  }
  if (dent_prob < 0.0 || dent_prob > 1.0) {
    throw std::invalid_argument("SynthConfig: dent probability must be in [0, 1]");
  }
  if (dent_decay <= 0.0 || dent_decay >= 1.0) {
    throw std::invalid_argument("SynthConfig: dent decay must be in (0, 1)");
  }
  if (sigma_w < 0.0) {
    throw std::invalid_argument("SynthConfig: sigma_w must be non-negative");
  }
  if (xy_jitter < 0.0) {
    throw std::invalid_argument("SynthConfig: xy jitter must be non-negative");
  }
  if (dent_extent.lo <= 0.0 || dent_extent.hi < dent_extent.lo) {
    throw std::invalid_argument("SynthConfig: dent extent range invalid");
  }
  if (dent_depth.lo <= 0.0 || dent_depth.hi < dent_depth.lo) {
    throw std::invalid_argument("SynthConfig: dent depth range invalid");
  }
}

double unit_dent(double r) {
  const double r2 = r * r;
  if (r2 >= 1.0) return 0.0;
  return -std::exp(-1.0 / (1.0 - r2));
}

double dent_field(const DentSpec& spec, double x, double y) {
  const double r2 = dent_r2(spec, x, y);
  if (r2 >= 1.0) return 0.0;
  return -spec.depth * kEuler * std::exp(-1.0 / (1.0 - r2));
}

bool dent_covers(const DentSpec& spec, double x, double y) {
  return dent_r2(spec, x, y) < 1.0;
}

SurfaceGrid base_surface(BaseSurfaceParams& params, const SynthConfig& config, Rng& rng) {
  params.alpha = params.alpha_range.draw(rng);
  params.beta = params.beta_range.draw(rng);

  const int w = config.width;
  const int h = config.height;
  const double px = config.pitch_x();
  const double py = config.pitch_y();
  const double x0 = -0.5 * (w - 1) * px;
  const double y0 = -0.5 * (h - 1) * py;

  SurfaceGrid grid(w, h, static_cast<float>(px), static_cast<float>(py));
  std::uniform_real_distribution<double> jitter(-config.xy_jitter, config.xy_jitter);
  for (int iy = 0; iy < h; ++iy) {
    for (int ix = 0; ix < w; ++ix) {
      const double x = x0 + ix * px + (config.xy_jitter > 0 ? jitter(rng) * px : 0.0);
      const double y = y0 + iy * py + (config.xy_jitter > 0 ? jitter(rng) * py : 0.0);
      grid.x(iy, ix) = static_cast<float>(x);
      grid.y(iy, ix) = static_cast<float>(y);
      grid.z(iy, ix) = static_cast<float>(params.alpha * x * x + params.beta * y * y);
    }
  }
  return grid;
}

std::vector<DentSpec> spawn_dents(const SynthConfig& config, Rng& rng) {
  std::vector<DentSpec> dents;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double accept = config.dent_prob;
  while (unit(rng) < accept) {
    DentSpec spec;
    spec.center_x = std::uniform_real_distribution<double>(-0.5 * config.world_x,
                                                           0.5 * config.world_x)(rng);
    spec.center_y = std::uniform_real_distribution<double>(-0.5 * config.world_y,
                                                           0.5 * config.world_y)(rng);
    spec.scale_x = 0.5 * config.dent_extent.draw(rng);
    spec.scale_y = 0.5 * config.dent_extent.draw(rng);
    spec.depth = config.dent_depth.draw(rng);
    spec.theta = std::uniform_real_distribution<double>(0.0, M_PI)(rng);
    dents.push_back(spec);
    accept *= config.dent_decay;
  }
  return dents;
}

LabelledSample compose_sample(const SurfaceGrid& base, const std::vector<DentSpec>& dents,
                              const SynthConfig& config, Rng& rng,
                              const ResidualGrid* noise_patch) {
  const int w = base.width();
  const int h = base.height();
  if (noise_patch && (noise_patch->width() != w || noise_patch->height() != h)) {
    throw std::invalid_argument("compose_sample: noise patch dimensions do not match grid");
  }

  LabelledSample sample;
  sample.surface = base;
  sample.truth = LabelMask(w, h);
  sample.provenance.dents = dents;

  // Deepest deformation wins per cell; every field is <= 0, so the
  // elementwise minimum realises the union of dents.
  GridArrayF deformation = GridArrayF::Zero(h, w);
  const double jitter_slack = config.xy_jitter * std::max(config.pitch_x(), config.pitch_y());
  const double x0 = -0.5 * (w - 1) * config.pitch_x();
  const double y0 = -0.5 * (h - 1) * config.pitch_y();
  for (const DentSpec& dent : dents) {
    // Index window from the rotated support ellipse's world bounding box.
    const double ct = std::cos(dent.theta), st = std::sin(dent.theta);
    const double bx = std::hypot(dent.scale_x * ct, dent.scale_y * st) + jitter_slack;
    const double by = std::hypot(dent.scale_x * st, dent.scale_y * ct) + jitter_slack;
    const int ix_lo = std::max(0, (int)std::floor((dent.center_x - bx - x0) / config.pitch_x()));
    const int ix_hi = std::min(w - 1, (int)std::ceil((dent.center_x + bx - x0) / config.pitch_x()));
    const int iy_lo = std::max(0, (int)std::floor((dent.center_y - by - y0) / config.pitch_y()));
    const int iy_hi = std::min(h - 1, (int)std::ceil((dent.center_y + by - y0) / config.pitch_y()));
    for (int iy = iy_lo; iy <= iy_hi; ++iy) {
      for (int ix = ix_lo; ix <= ix_hi; ++ix) {
        const double field = dent_field(dent, base.x(iy, ix), base.y(iy, ix));
        if (field < 0.0) {
          sample.truth.values(iy, ix) = 1;
          deformation(iy, ix) = std::min(deformation(iy, ix), static_cast<float>(field));
        }
      }
    }
  }
  sample.surface.z += deformation;

  if (config.sigma_w > 0.0) {
    std::normal_distribution<double> noise(0.0, config.sigma_w);
    for (int iy = 0; iy < h; ++iy) {
      for (int ix = 0; ix < w; ++ix) {
        sample.surface.z(iy, ix) += static_cast<float>(noise(rng));
      }
    }
  }
  if (noise_patch) sample.surface.z += noise_patch->values;

  return rotate_sample(sample, config, rng);
}

LabelledSample rotate_sample(const LabelledSample& sample, const Eigen::Vector3d& angles_deg) {
  const Eigen::Vector3d rad = angles_deg * (M_PI / 180.0);
  Eigen::Matrix3d rx, ry, rz;
  rx << 1, 0, 0, 0, std::cos(rad.x()), -std::sin(rad.x()), 0, std::sin(rad.x()), std::cos(rad.x());
  ry << std::cos(rad.y()), 0, std::sin(rad.y()), 0, 1, 0, -std::sin(rad.y()), 0, std::cos(rad.y());
  rz << std::cos(rad.z()), -std::sin(rad.z()), 0, std::sin(rad.z()), std::cos(rad.z()), 0, 0, 0, 1;
  const Eigen::Matrix3d r = rz * ry * rx;

  LabelledSample out;
  out.truth = sample.truth;  // labels ride with the points
  out.provenance = sample.provenance;
  out.provenance.rotation_deg += angles_deg;

  const SurfaceGrid& g = sample.surface;
  SurfaceGrid rotated(g.width(), g.height(), g.pitch_x, g.pitch_y);
  const auto xd = g.x.cast<double>();
  const auto yd = g.y.cast<double>();
  const auto zd = g.z.cast<double>();
  rotated.x = (r(0, 0) * xd + r(0, 1) * yd + r(0, 2) * zd).cast<float>();
  rotated.y = (r(1, 0) * xd + r(1, 1) * yd + r(1, 2) * zd).cast<float>();
  rotated.z = (r(2, 0) * xd + r(2, 1) * yd + r(2, 2) * zd).cast<float>();
  out.surface = std::move(rotated);
  return out;
}

LabelledSample rotate_sample(const LabelledSample& sample, const SynthConfig& config, Rng& rng) {
  Eigen::Vector3d angles = Eigen::Vector3d::Zero();
  if (config.rot_limit_deg > 0.0) {
    std::uniform_real_distribution<double> limit(-config.rot_limit_deg, config.rot_limit_deg);
    angles << limit(rng), limit(rng), limit(rng);
  }
  return rotate_sample(sample, angles);
}

LabelledSample generate_sample(const SynthConfig& config, std::uint64_t master_seed,
                               std::uint64_t index, const ResidualGrid* noise_patch) {
  Rng rng = substream(master_seed, index);
  BaseSurfaceParams params;
  params.alpha_range = config.curvature;
  params.beta_range = config.curvature;
  const SurfaceGrid base = base_surface(params, config, rng);
  const std::vector<DentSpec> dents = spawn_dents(config, rng);

  LabelledSample sample = compose_sample(base, dents, config, rng, noise_patch);
  sample.provenance.seed = master_seed;
  sample.provenance.alpha = params.alpha;
  sample.provenance.beta = params.beta;
  return sample;
}

void generate_dataset(const SynthConfig& config, int count, std::uint64_t master_seed,
                      const std::function<void(int, LabelledSample&&)>& sink) {
  if (count < 1) throw std::invalid_argument("generate_dataset: count must be >= 1");
  config.validate();
  for (int i = 0; i < count; ++i) {
    sink(i, generate_sample(config, master_seed, static_cast<std::uint64_t>(i)));
  }
}

}  // namespace dentseg
