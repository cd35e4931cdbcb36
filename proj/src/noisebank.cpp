#include "dentseg/noisebank.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>

#include "dentseg/preprocess.hpp"

namespace dentseg {

NoiseMap ingest_flat_scan(const SurfaceGrid& scan, std::string source_id) {
  const PlaneFit plane = fit_plane(scan);
  if (std::abs(plane.normal.z()) < 1e-9) {
    throw std::runtime_error("ingest_flat_scan: fitted plane is vertical");
  }
  // z-distance from n·p = offset, solved for z: (offset - nx·x - ny·y)/nz.
  const auto x = scan.x.cast<double>();
  const auto y = scan.y.cast<double>();
  const auto plane_z = (plane.offset - plane.normal.x() * x - plane.normal.y() * y) / plane.normal.z();

  NoiseMap map;
  map.residuals = ResidualGrid((scan.z.cast<double>() - plane_z).cast<float>());
  map.source = std::move(source_id);

  const double mean = map.residuals.values.cast<double>().mean();
  if (std::abs(mean) > 0.05) {
    throw std::runtime_error("ingest_flat_scan: residual mean " + std::to_string(mean) +
                             " mm exceeds 0.05 mm; scan is not flat");
  }
  return map;
}

ResidualGrid sample_patch(const NoiseBank& bank, int w, int h, Rng& rng) {
  if (w < 1 || h < 1) throw std::invalid_argument("sample_patch: patch size must be >= 1");

  std::vector<int> eligible;
  for (int i = 0; i < static_cast<int>(bank.maps.size()); ++i) {
    const ResidualGrid& r = bank.maps[i].residuals;
    if (r.width() >= w && r.height() >= h) eligible.push_back(i);
  }
  if (eligible.empty()) {
    throw std::runtime_error("sample_patch: no noise map can serve a " + std::to_string(w) +
                             "x" + std::to_string(h) + " patch");
  }

  const int pick = eligible[std::uniform_int_distribution<int>(
      0, static_cast<int>(eligible.size()) - 1)(rng)];
  const ResidualGrid& src = bank.maps[pick].residuals;
  const int ox = std::uniform_int_distribution<int>(0, src.width() - w)(rng);
  const int oy = std::uniform_int_distribution<int>(0, src.height() - h)(rng);

  ResidualGrid patch = crop(src, ox, oy, w, h);
  std::bernoulli_distribution coin(0.5);
  if (bank.augment.hflip && coin(rng)) patch = flip(patch, FlipAxis::Horizontal);
  if (bank.augment.vflip && coin(rng)) patch = flip(patch, FlipAxis::Vertical);
  return patch;
}

}  // namespace dentseg
