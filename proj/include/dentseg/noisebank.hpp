#pragma once

#include <string>
#include <vector>

#include "dentseg/grid.hpp"
#include "dentseg/rng.hpp"

namespace dentseg {

/// Plane residuals of one flat-board scan. Mean is zero by construction
/// (the fitted plane passes through the centroid).
struct NoiseMap {
  ResidualGrid residuals;  // mm
  std::string source;
};

struct NoiseAugment {
  bool hflip = true;  // each applied independently with probability 0.5
  bool vflip = true;
};

/// Collection of real scanner-noise fields served as training patches.
struct NoiseBank {
  std::vector<NoiseMap> maps;
  NoiseAugment augment;
};

/// Subtract the best-fit plane from a nominally flat scan; residuals are
/// z-distances on the original grid. Throws on degenerate (collinear) scans
/// or when the plane removal leaves a mean residual beyond 0.05 mm.
NoiseMap ingest_flat_scan(const SurfaceGrid& scan, std::string source_id = {});

/// Uniformly chosen map (among those large enough), uniformly placed crop,
/// independent horizontal/vertical flips with probability 0.5 each.
/// Never fabricates values: each output cell equals some source-map cell.
/// Throws when no map can serve the requested size.
ResidualGrid sample_patch(const NoiseBank& bank, int w, int h, Rng& rng);

}  // namespace dentseg
