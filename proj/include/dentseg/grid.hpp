#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace dentseg {

// All grids are row-major planes: row index = y, column index = x.
template <typename Scalar>
using GridArray = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using GridArrayF = GridArray<float>;
using GridArrayB = GridArray<std::uint8_t>;

using Point3 = Eigen::Vector3f;

struct CellIndex {
  int x = 0;
  int y = 0;
  bool operator==(const CellIndex&) const = default;
};

/// Ordered w×h scan grid. Index adjacency mirrors adjacency on the scanned
/// or generated surface; no neighbour search is ever needed downstream.
/// Scan data lives at 32-bit (SurfaceGrid); the double variant exists for
/// the fitting operators, whose contracts are tighter than float storage.
template <typename Scalar>
struct SurfaceGridT {
  GridArray<Scalar> x, y, z;  // h rows × w cols each, millimetres
  Scalar pitch_x = 1;         // nominal spacing, mm/pixel
  Scalar pitch_y = 1;

  SurfaceGridT() = default;
  SurfaceGridT(int width, int height, Scalar px = 1, Scalar py = 1)
      : x(GridArray<Scalar>::Zero(height, width)),
        y(GridArray<Scalar>::Zero(height, width)),
        z(GridArray<Scalar>::Zero(height, width)),
        pitch_x(px),
        pitch_y(py) {
    if (width < 1 || height < 1) throw std::invalid_argument("SurfaceGrid: dimensions must be >= 1");
  }

  int width() const { return static_cast<int>(x.cols()); }
  int height() const { return static_cast<int>(x.rows()); }
  Eigen::Matrix<Scalar, 3, 1> point(int ix, int iy) const {
    return {x(iy, ix), y(iy, ix), z(iy, ix)};
  }

  template <typename Other>
  SurfaceGridT<Other> cast() const {
    SurfaceGridT<Other> out;
    out.x = x.template cast<Other>();
    out.y = y.template cast<Other>();
    out.z = z.template cast<Other>();
    out.pitch_x = static_cast<Other>(pitch_x);
    out.pitch_y = static_cast<Other>(pitch_y);
    return out;
  }
};

using SurfaceGrid = SurfaceGridT<float>;
using SurfaceGridD = SurfaceGridT<double>;

/// Signed per-cell z-distance from a fitted base surface, mm. The network input.
template <typename Scalar>
struct ResidualGridT {
  GridArray<Scalar> values;

  ResidualGridT() = default;
  explicit ResidualGridT(GridArray<Scalar> v) : values(std::move(v)) {}
  ResidualGridT(int width, int height) : values(GridArray<Scalar>::Zero(height, width)) {}

  int width() const { return static_cast<int>(values.cols()); }
  int height() const { return static_cast<int>(values.rows()); }
};

using ResidualGrid = ResidualGridT<float>;
using ResidualGridD = ResidualGridT<double>;

/// Binary per-cell labels, 1 = dented.
struct LabelMask {
  GridArrayB values;

  LabelMask() = default;
  explicit LabelMask(GridArrayB v) : values(std::move(v)) {}
  LabelMask(int width, int height) : values(GridArrayB::Zero(height, width)) {}

  int width() const { return static_cast<int>(values.cols()); }
  int height() const { return static_cast<int>(values.rows()); }
};

/// Per-cell probabilities in [0,1] (sigmoid output range).
struct ProbMask {
  GridArrayF values;

  ProbMask() = default;
  explicit ProbMask(GridArrayF v) : values(std::move(v)) {}
  ProbMask(int width, int height) : values(GridArrayF::Zero(height, width)) {}

  int width() const { return static_cast<int>(values.cols()); }
  int height() const { return static_cast<int>(values.rows()); }
};

enum class FlipAxis { Horizontal, Vertical };

namespace detail {

inline void check_window(int src_w, int src_h, int ox, int oy, int w, int h) {
  if (ox < 0 || oy < 0 || w < 1 || h < 1 || ox + w > src_w || oy + h > src_h) {
    throw std::out_of_range("crop: window " + std::to_string(w) + "x" + std::to_string(h) +
                            " at (" + std::to_string(ox) + "," + std::to_string(oy) +
                            ") exceeds source " + std::to_string(src_w) + "x" +
                            std::to_string(src_h));
  }
}

}  // namespace detail

/// Exact sub-window; selection only, never resampled.
template <typename Scalar>
GridArray<Scalar> crop(const GridArray<Scalar>& src, int ox, int oy, int w, int h) {
  detail::check_window(static_cast<int>(src.cols()), static_cast<int>(src.rows()), ox, oy, w, h);
  return src.block(oy, ox, h, w);
}

template <typename Scalar>
GridArray<Scalar> flip(const GridArray<Scalar>& src, FlipAxis axis) {
  if (axis == FlipAxis::Horizontal) return src.rowwise().reverse();
  return src.colwise().reverse();
}

template <typename Scalar>
SurfaceGridT<Scalar> crop(const SurfaceGridT<Scalar>& g, int ox, int oy, int w, int h) {
  SurfaceGridT<Scalar> out;
  out.x = crop(g.x, ox, oy, w, h);
  out.y = crop(g.y, ox, oy, w, h);
  out.z = crop(g.z, ox, oy, w, h);
  out.pitch_x = g.pitch_x;
  out.pitch_y = g.pitch_y;
  return out;
}

template <typename Scalar>
ResidualGridT<Scalar> crop(const ResidualGridT<Scalar>& g, int ox, int oy, int w, int h) {
  return ResidualGridT<Scalar>(crop(g.values, ox, oy, w, h));
}

inline LabelMask crop(const LabelMask& g, int ox, int oy, int w, int h) {
  return LabelMask(crop(g.values, ox, oy, w, h));
}

inline ProbMask crop(const ProbMask& g, int ox, int oy, int w, int h) {
  return ProbMask(crop(g.values, ox, oy, w, h));
}

template <typename Scalar>
SurfaceGridT<Scalar> flip(const SurfaceGridT<Scalar>& g, FlipAxis axis) {
  SurfaceGridT<Scalar> out;
  out.x = flip(g.x, axis);
  out.y = flip(g.y, axis);
  out.z = flip(g.z, axis);
  out.pitch_x = g.pitch_x;
  out.pitch_y = g.pitch_y;
  return out;
}

template <typename Scalar>
ResidualGridT<Scalar> flip(const ResidualGridT<Scalar>& g, FlipAxis axis) {
  return ResidualGridT<Scalar>(flip(g.values, axis));
}

inline LabelMask flip(const LabelMask& g, FlipAxis axis) {
  return LabelMask(flip(g.values, axis));
}

inline ProbMask flip(const ProbMask& g, FlipAxis axis) {
  return ProbMask(flip(g.values, axis));
}

/// Cell indices holding NaN/Inf; empty for valid grids.
template <typename Scalar>
std::vector<CellIndex> validate_finite(const GridArray<Scalar>& values) {
  std::vector<CellIndex> bad;
  const int h = static_cast<int>(values.rows());
  const int w = static_cast<int>(values.cols());
  for (int iy = 0; iy < h; ++iy) {
    for (int ix = 0; ix < w; ++ix) {
      if (!std::isfinite(values(iy, ix))) bad.push_back({ix, iy});
    }
  }
  return bad;
}

template <typename Scalar>
std::vector<CellIndex> validate_finite(const SurfaceGridT<Scalar>& grid) {
  std::vector<CellIndex> bad;
  const int h = grid.height();
  const int w = grid.width();
  for (int iy = 0; iy < h; ++iy) {
    for (int ix = 0; ix < w; ++ix) {
      if (!std::isfinite(grid.x(iy, ix)) || !std::isfinite(grid.y(iy, ix)) ||
          !std::isfinite(grid.z(iy, ix))) {
        bad.push_back({ix, iy});
      }
    }
  }
  return bad;
}

template <typename Scalar>
std::vector<CellIndex> validate_finite(const ResidualGridT<Scalar>& g) {
  return validate_finite(g.values);
}

}  // namespace dentseg
