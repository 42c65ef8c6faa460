#pragma once

#include <cstddef>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "ndesc/geomcore.hpp"

namespace ndesc {

/// Per-point right-handed tangent frame (e1, e2, n).
struct TangentFrames {
  Points e1;
  Points e2;
  Points normal;
  std::size_t fallback_count = 0;

  std::size_t size() const { return static_cast<std::size_t>(normal.rows()); }
};

// Tangent vector fields are stored stacked: rows [0, N) hold the e1
// components and rows [N, 2N) the e2 components. A field with C channels is
// a 2N x C matrix.

/// Frames from the covariance of each point and its k neighbours. The normal
/// is the least-variance axis oriented toward +z; e1 is global +x projected
/// onto the tangent plane (+y when +x is nearly normal).
TangentFrames build_tangent_frames(const Points& points, std::size_t k);

struct GradientOperator {
  SparseMatrix matrix;           // 2N x N
  std::size_t ridge_count = 0;   // fits that needed ridge regularisation
};

/// Weighted least-squares gradient: at each point an affine function
/// c + g^T (xi, eta) is fitted over the point and its k neighbours in tangent
/// coordinates, Gaussian weights with bandwidth = mean neighbour distance.
GradientOperator build_gradient(const Points& points, const TangentFrames& frames, std::size_t k);

struct OperatorSet {
  SparseMatrix gradient;    // 2N x N
  SparseMatrix divergence;  // N x 2N, -G^T under uniform quadrature weights
  SparseMatrix curl;        // N x 2N, divergence composed with J
  SparseMatrix laplacian;   // N x N, divergence * gradient (negative semidefinite)
  std::size_t k = 0;

  Eigen::Index points() const { return laplacian.rows(); }
};

OperatorSet assemble_operators(const TangentFrames& frames, const GradientOperator& gradient,
                               std::size_t k);

/// Frames, gradient and assembly in one call (k defaults to 20).
OperatorSet build_operators(const Points& points, std::size_t k = 20);

/// J: per-point 90 degree rotation in the tangent plane, (a, b) -> (-b, a).
Eigen::MatrixXd rotate_j(const Eigen::MatrixXd& field);

Eigen::MatrixXd apply_gradient(const OperatorSet& ops, const Eigen::MatrixXd& scalars);
Eigen::MatrixXd apply_divergence(const OperatorSet& ops, const Eigen::MatrixXd& field);
Eigen::MatrixXd apply_curl(const OperatorSet& ops, const Eigen::MatrixXd& field);
Eigen::MatrixXd apply_laplacian(const OperatorSet& ops, const Eigen::MatrixXd& scalars);
/// grad(div v) - J grad(curl v).
Eigen::MatrixXd apply_vector_laplacian(const OperatorSet& ops, const Eigen::MatrixXd& field);

}  // namespace ndesc
