#include "dentseg/preprocess.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

namespace dentseg {

namespace {

struct Moments {
  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
  Eigen::Matrix3d covariance = Eigen::Matrix3d::Zero();
};

template <typename Scalar>
Moments centered_moments(const SurfaceGridT<Scalar>& grid) {
  const Eigen::Index n = grid.x.size();
  auto xs = grid.x.reshaped().template cast<double>();
  auto ys = grid.y.reshaped().template cast<double>();
  auto zs = grid.z.reshaped().template cast<double>();

  Moments m;
  m.centroid << xs.sum() / double(n), ys.sum() / double(n), zs.sum() / double(n);
  const Eigen::ArrayXd dx = xs.array() - m.centroid.x();
  const Eigen::ArrayXd dy = ys.array() - m.centroid.y();
  const Eigen::ArrayXd dz = zs.array() - m.centroid.z();
  m.covariance(0, 0) = (dx * dx).sum();
  m.covariance(0, 1) = m.covariance(1, 0) = (dx * dy).sum();
  m.covariance(0, 2) = m.covariance(2, 0) = (dx * dz).sum();
  m.covariance(1, 1) = (dy * dy).sum();
  m.covariance(1, 2) = m.covariance(2, 1) = (dy * dz).sum();
  m.covariance(2, 2) = (dz * dz).sum();
  return m;
}

PlaneFit plane_from_moments(const Moments& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> solver(m.covariance);
  if (solver.info() != Eigen::Success) {
    throw std::runtime_error("fit_plane: eigen decomposition failed");
  }
  // Eigenvalues ascend. A valid plane spreads in two directions; points on a
  // line (or a single point) leave the middle eigenvalue at zero.
  const Eigen::Vector3d evals = solver.eigenvalues();
  if (evals(1) <= 1e-12 * std::max(evals(2), 1e-300)) {
    throw std::runtime_error("fit_plane: points are collinear (rank-deficient)");
  }

  Eigen::Vector3d normal = solver.eigenvectors().col(0);
  if (normal.z() < 0) normal = -normal;
  if (normal.z() == 0) {
    throw std::runtime_error("fit_plane: fitted normal perpendicular to z-axis");
  }
  return PlaneFit{normal, normal.dot(m.centroid)};
}

template <typename Scalar>
SurfaceGridT<Scalar> rotate_about_centroid(const SurfaceGridT<Scalar>& grid,
                                           const Eigen::Matrix3d& rt, const Eigen::Vector3d& c) {
  SurfaceGridT<Scalar> out(grid.width(), grid.height(), grid.pitch_x, grid.pitch_y);
  const auto dx = grid.x.template cast<double>() - c.x();
  const auto dy = grid.y.template cast<double>() - c.y();
  const auto dz = grid.z.template cast<double>() - c.z();
  out.x = (c.x() + rt(0, 0) * dx + rt(0, 1) * dy + rt(0, 2) * dz).template cast<Scalar>();
  out.y = (c.y() + rt(1, 0) * dx + rt(1, 1) * dy + rt(1, 2) * dz).template cast<Scalar>();
  out.z = (c.z() + rt(2, 0) * dx + rt(2, 1) * dy + rt(2, 2) * dz).template cast<Scalar>();
  return out;
}

}  // namespace

template <typename Scalar>
PlaneFit fit_plane(const SurfaceGridT<Scalar>& grid) {
  if (grid.width() * grid.height() < 3) {
    throw std::runtime_error("fit_plane: need at least 3 points");
  }
  return plane_from_moments(centered_moments(grid));
}

Eigen::Matrix3d alignment_rotation(const Eigen::Vector3d& n) {
  const double norm = n.norm();
  if (std::abs(norm - 1.0) > 1e-6) {
    throw std::invalid_argument("alignment_rotation: normal must be unit length");
  }
  const Eigen::Vector3d zhat = Eigen::Vector3d::UnitZ();
  const double c = zhat.dot(n);
  if (c < -1.0 + 1e-6) {
    throw std::invalid_argument("alignment_rotation: normal antiparallel to z-axis");
  }
  const Eigen::Vector3d v = zhat.cross(n);
  Eigen::Matrix3d vx;
  vx << 0, -v.z(), v.y(),
        v.z(), 0, -v.x(),
        -v.y(), v.x(), 0;
  return Eigen::Matrix3d::Identity() + vx + vx * vx / (1.0 + c);
}

template <typename Scalar>
SurfaceGridT<Scalar> canonicalize(const SurfaceGridT<Scalar>& grid) {
  const Moments m = centered_moments(grid);
  const PlaneFit plane = plane_from_moments(m);
  const Eigen::Matrix3d rt = alignment_rotation(plane.normal).transpose();
  return rotate_about_centroid(grid, rt, m.centroid);
}

template <typename Scalar>
QuadricCoeffs fit_quadric(const SurfaceGridT<Scalar>& grid) {
  const Eigen::Index n = grid.x.size();
  if (n < 6) throw std::runtime_error("fit_quadric: need at least 6 points");

  const Eigen::ArrayXd xs = grid.x.reshaped().template cast<double>();
  const Eigen::ArrayXd ys = grid.y.reshaped().template cast<double>();
  const Eigen::VectorXd zs = grid.z.reshaped().template cast<double>();

  // Centre and scale to unit RMS for conditioning.
  const double mx = xs.mean(), my = ys.mean();
  const Eigen::ArrayXd u0 = xs - mx;
  const Eigen::ArrayXd v0 = ys - my;
  double sx = std::sqrt(u0.square().mean());
  double sy = std::sqrt(v0.square().mean());
  if (sx <= 0) sx = 1.0;
  if (sy <= 0) sy = 1.0;
  const Eigen::ArrayXd u = u0 / sx;
  const Eigen::ArrayXd v = v0 / sy;

  Eigen::Matrix<double, Eigen::Dynamic, 6> design(n, 6);
  design.col(0).setOnes();
  design.col(1) = u;
  design.col(2) = v;
  design.col(3) = u.square();
  design.col(4) = u * v;
  design.col(5) = v.square();

  const Eigen::Matrix<double, 6, 6> ata = design.transpose() * design;
  const Eigen::Matrix<double, 6, 1> atz = design.transpose() * zs;

  Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 6, 6>> es(ata);
  const auto evals = es.eigenvalues();
  if (evals(0) <= 1e-12 * std::max(evals(5), 1e-300)) {
    throw std::runtime_error("fit_quadric: design matrix rank-deficient");
  }
  const Eigen::Matrix<double, 6, 1> k = ata.ldlt().solve(atz);

  // Map scaled-frame coefficients back to world x, y.
  QuadricCoeffs q;
  q.d = k(3) / (sx * sx);
  q.f = k(5) / (sy * sy);
  q.e = k(4) / (sx * sy);
  q.b = k(1) / sx - 2.0 * k(3) * mx / (sx * sx) - k(4) * my / (sx * sy);
  q.c = k(2) / sy - 2.0 * k(5) * my / (sy * sy) - k(4) * mx / (sx * sy);
  q.a = k(0) - k(1) * mx / sx - k(2) * my / sy + k(3) * mx * mx / (sx * sx) +
        k(4) * mx * my / (sx * sy) + k(5) * my * my / (sy * sy);
  return q;
}

template <typename Scalar>
ResidualGridT<Scalar> residuals(const SurfaceGridT<Scalar>& grid, const QuadricCoeffs& q) {
  const auto x = grid.x.template cast<double>();
  const auto y = grid.y.template cast<double>();
  const auto fitted = q.a + q.b * x + q.c * y + q.d * x.square() + q.e * x * y + q.f * y.square();
  return ResidualGridT<Scalar>((grid.z.template cast<double>() - fitted).template cast<Scalar>());
}

Preprocessed preprocess(const SurfaceGrid& grid) {
  const Moments m = centered_moments(grid);
  const PlaneFit plane = plane_from_moments(m);

  Preprocessed out;
  out.rotation = alignment_rotation(plane.normal);
  const SurfaceGrid canonical = rotate_about_centroid(grid, out.rotation.transpose(), m.centroid);
  out.quadric = fit_quadric(canonical);
  out.residuals = residuals(canonical, out.quadric);
  out.source_width = grid.width();
  out.source_height = grid.height();
  return out;
}

template PlaneFit fit_plane<float>(const SurfaceGridT<float>&);
template PlaneFit fit_plane<double>(const SurfaceGridT<double>&);
template SurfaceGridT<float> canonicalize<float>(const SurfaceGridT<float>&);
template SurfaceGridT<double> canonicalize<double>(const SurfaceGridT<double>&);
template QuadricCoeffs fit_quadric<float>(const SurfaceGridT<float>&);
template QuadricCoeffs fit_quadric<double>(const SurfaceGridT<double>&);
template ResidualGridT<float> residuals<float>(const SurfaceGridT<float>&, const QuadricCoeffs&);
template ResidualGridT<double> residuals<double>(const SurfaceGridT<double>&, const QuadricCoeffs&);

}  // namespace dentseg
