#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <vector>

#include "dentseg/grid.hpp"
#include "dentseg/rng.hpp"

namespace dentseg {

struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  double draw(Rng& rng) const {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  }
};

/// Base curvature z = alpha·x² + beta·y², coefficients in 1/mm.
/// base_surface() draws alpha/beta from the ranges and writes them back.
struct BaseSurfaceParams {
  double alpha = 0.0;
  double beta = 0.0;
  Interval alpha_range{-5e-4, 5e-4};  // |curvature| <= 5e-4/mm ~ radius >= 1 m
  Interval beta_range{-5e-4, 5e-4};
};

/// One synthetic dent: a compactly supported bump, rescaled per axis,
/// rotated in-plane and shifted. Support is the ellipse r < 1 in the
/// dent's local rescaled frame.
struct DentSpec {
  double center_x = 0.0;  // mm
  double center_y = 0.0;  // mm
  double scale_x = 1.0;   // mm, half-extent of the support ellipse
  double scale_y = 1.0;   // mm
  double depth = 1.0;     // mm, peak deformation magnitude (> 0, applied negatively)
  double theta = 0.0;     // in-plane rotation, radians
};

struct SynthConfig {
  double world_x = 500.0;  // mm
  double world_y = 330.0;  // mm
  int width = 160;         // pixels, multiple of 16
  int height = 96;
  double dent_prob = 0.8;       // p: probability of the first dent
  double dent_decay = 0.5;      // q: dent k+1 spawns with probability p·q^k
  double sigma_w = 1.6;         // mm, Gaussian white z-noise
  double xy_jitter = 0.25;      // uniform xy noise amplitude, fraction of pitch
  double rot_limit_deg = 15.0;  // per-axis rigid rotation limit
  Interval curvature{-5e-4, 5e-4};
  Interval dent_extent{20.0, 150.0};  // mm, full axis lengths (2× the half-extent)
  Interval dent_depth{0.5, 5.0};      // mm
  std::uint64_t seed = 0;

  double pitch_x() const { return width > 1 ? world_x / (width - 1) : world_x; }
  double pitch_y() const { return height > 1 ? world_y / (height - 1) : world_y; }

  /// Throws std::invalid_argument when a field is outside its admissible range.
  void validate() const;
};

struct Provenance {
  std::uint64_t seed = 0;
  double alpha = 0.0;
  double beta = 0.0;
  std::vector<DentSpec> dents;
  Eigen::Vector3d rotation_deg = Eigen::Vector3d::Zero();  // applied x, y, z angles
};

struct LabelledSample {
  SurfaceGrid surface;
  LabelMask truth;
  Provenance provenance;
};

/// Unit dent profile: -e^(-1/(1-r²)) for |r| < 1, exactly 0 elsewhere.
/// Smooth at the boundary; minimum -e⁻¹ at r = 0.
double unit_dent(double r);

/// Deformation of one dent at world (x, y): depth·e·unit_dent(r) with r taken
/// in the dent's shifted/rotated/rescaled frame, so the peak equals -depth.
double dent_field(const DentSpec& spec, double x, double y);

/// True when (x, y) lies inside the dent's support ellipse (r < 1).
bool dent_covers(const DentSpec& spec, double x, double y);

/// Curved base grid: z = alpha·x² + beta·y² evaluated over the jittered
/// xy lattice. alpha/beta are drawn from params' ranges and written back.
SurfaceGrid base_surface(BaseSurfaceParams& params, const SynthConfig& config, Rng& rng);

/// Dent list: first dent with probability p, dent k+1 with probability p·q^k;
/// each spec drawn from the configured ranges.
std::vector<DentSpec> spawn_dents(const SynthConfig& config, Rng& rng);

/// z = base + deepest dent deformation per cell + Gaussian white noise +
/// optional real noise patch; truth marks cells under any dent support
/// (evaluated pre-rotation); the whole sample is then rigidly rotated.
LabelledSample compose_sample(const SurfaceGrid& base, const std::vector<DentSpec>& dents,
                              const SynthConfig& config, Rng& rng,
                              const ResidualGrid* noise_patch = nullptr);

/// Rigid rotation of all points by Rz·Ry·Rx of the given angles (degrees);
/// labels ride with the points, angles are recorded in provenance.
LabelledSample rotate_sample(const LabelledSample& sample, const Eigen::Vector3d& angles_deg);

/// Draws per-axis angles uniformly within ±config.rot_limit_deg.
LabelledSample rotate_sample(const LabelledSample& sample, const SynthConfig& config, Rng& rng);

/// Full single-sample pipeline for dataset index `index` under `master_seed`.
LabelledSample generate_sample(const SynthConfig& config, std::uint64_t master_seed,
                               std::uint64_t index,
                               const ResidualGrid* noise_patch = nullptr);

/// Deterministic stream: sample i is derived from an independent per-index
/// substream of the master seed and delivered to `sink` in index order.
void generate_dataset(const SynthConfig& config, int count, std::uint64_t master_seed,
                      const std::function<void(int, LabelledSample&&)>& sink);

}  // namespace dentseg
