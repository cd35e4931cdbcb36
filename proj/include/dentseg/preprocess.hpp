#pragma once

#include <Eigen/Core>

#include "dentseg/grid.hpp"

namespace dentseg {

/// Total-least-squares plane n·p = offset with ‖n‖ = 1 and n·ẑ > 0.
struct PlaneFit {
  Eigen::Vector3d normal = Eigen::Vector3d::UnitZ();
  double offset = 0.0;  // mm
};

/// z(x,y) = a + b·x + c·y + d·x² + e·xy + f·y², world-frame coefficients.
struct QuadricCoeffs {
  double a = 0, b = 0, c = 0, d = 0, e = 0, f = 0;

  double evaluate(double x, double y) const {
    return a + b * x + c * y + d * x * x + e * x * y + f * y * y;
  }
};

/// Result of the 3D→2.5D reduction, with the transform metadata needed to
/// map per-cell predictions back onto the original 3D points.
struct Preprocessed {
  ResidualGrid residuals;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();  // applied as Rᵀ to points
  QuadricCoeffs quadric;
  int source_width = 0;
  int source_height = 0;
};

/// Fit a plane by the smallest principal direction of the centered covariance.
/// Accumulation is 64-bit regardless of the grid scalar. Throws
/// std::runtime_error on rank-deficient input (< 3 non-collinear points).
template <typename Scalar>
PlaneFit fit_plane(const SurfaceGridT<Scalar>& grid);

/// Minimal rotation R with R·ẑ = n, built from the cross-product skew matrix:
/// R = I + [ẑ×n]ₓ + [ẑ×n]ₓ² / (1 + ẑ·n). Requires ẑ·n > -1 + 1e-6.
Eigen::Matrix3d alignment_rotation(const Eigen::Vector3d& n);

/// Rotate the grid (about its centroid) so the average normal maps onto ẑ.
template <typename Scalar>
SurfaceGridT<Scalar> canonicalize(const SurfaceGridT<Scalar>& grid);

/// Linear least squares over the basis [1, x, y, x², xy, y²]. Inputs are
/// centred and scaled before the 64-bit normal-equation solve; coefficients
/// are mapped back to the world frame. Throws on a rank-deficient design.
template <typename Scalar>
QuadricCoeffs fit_quadric(const SurfaceGridT<Scalar>& grid);

/// Per-cell z − quadric(x, y), evaluated in 64-bit, stored at the grid scalar.
template <typename Scalar>
ResidualGridT<Scalar> residuals(const SurfaceGridT<Scalar>& grid, const QuadricCoeffs& coeffs);

/// Canonical rotation, quadric fit, residual extraction.
Preprocessed preprocess(const SurfaceGrid& grid);

}  // namespace dentseg
