#include "ndesc/deltaops.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include "ndesc/errors.hpp"

namespace ndesc {

TangentFrames build_tangent_frames(const Points& points, std::size_t k) {
  if (k < 6) throw ConfigError("tangent frames need k >= 6");
  const Eigen::Index n = points.rows();
  if (static_cast<std::size_t>(n) <= k)
    throw ConfigError("tangent frames need more than k=" + std::to_string(k) + " points");
  const auto table = knn_table(points, k);

  TangentFrames frames;
  frames.e1.resize(n, 3);
  frames.e2.resize(n, 3);
  frames.normal.resize(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Vector3d mean = points.row(i).transpose();
    for (Eigen::Index j = 0; j < table.cols(); ++j) mean += points.row(table(i, j)).transpose();
    mean /= static_cast<double>(table.cols() + 1);
    Eigen::Matrix3d cov = (points.row(i).transpose() - mean) * (points.row(i).transpose() - mean).transpose();
    for (Eigen::Index j = 0; j < table.cols(); ++j) {
      const Eigen::Vector3d d = points.row(table(i, j)).transpose() - mean;
      cov += d * d.transpose();
    }
    const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
    const Eigen::Vector3d ev = eig.eigenvalues();
    Eigen::Vector3d n_i = eig.eigenvectors().col(0);
    Eigen::Vector3d e1;
    Eigen::Vector3d e2;
    if (!(ev[1] > 1e-12 * std::max(ev[2], 1e-300)) || !n_i.allFinite()) {
      n_i = Eigen::Vector3d::UnitZ();
      e1 = Eigen::Vector3d::UnitX();
      e2 = Eigen::Vector3d::UnitY();
      ++frames.fallback_count;
    } else {
      if (n_i.z() < 0.0) n_i = -n_i;
      n_i.normalize();
      Eigen::Vector3d ref = Eigen::Vector3d::UnitX();
      if (std::abs(ref.dot(n_i)) > 0.9) ref = Eigen::Vector3d::UnitY();
      e1 = (ref - ref.dot(n_i) * n_i).normalized();
      e2 = n_i.cross(e1);
    }
    frames.e1.row(i) = e1.transpose();
    frames.e2.row(i) = e2.transpose();
    frames.normal.row(i) = n_i.transpose();
  }
  return frames;
}

GradientOperator build_gradient(const Points& points, const TangentFrames& frames, std::size_t k) {
  const Eigen::Index n = points.rows();
  if (static_cast<Eigen::Index>(frames.size()) != n)
    throw ShapeError("gradient: frame count does not match point count");
  const auto table = knn_table(points, k);
  const Eigen::Index m = table.cols() + 1;

  GradientOperator out;
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(static_cast<std::size_t>(2 * n * m));
  Eigen::MatrixXd design(m, 3);
  Eigen::VectorXd weight(m);
  std::vector<int> ids(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < n; ++i) {
    ids[0] = static_cast<int>(i);
    double bandwidth = 0.0;
    for (Eigen::Index j = 1; j < m; ++j) {
      ids[static_cast<std::size_t>(j)] = table(i, j - 1);
      bandwidth += (points.row(table(i, j - 1)) - points.row(i)).norm();
    }
    bandwidth /= static_cast<double>(m - 1);
    if (!(bandwidth > 0.0)) bandwidth = 1.0;
    const Eigen::Vector3d e1 = frames.e1.row(i).transpose();
    const Eigen::Vector3d e2 = frames.e2.row(i).transpose();
    for (Eigen::Index j = 0; j < m; ++j) {
      const Eigen::Vector3d d = (points.row(ids[static_cast<std::size_t>(j)]) - points.row(i)).transpose();
      design(j, 0) = 1.0;
      design(j, 1) = d.dot(e1);
      design(j, 2) = d.dot(e2);
      weight[j] = std::exp(-d.squaredNorm() / (bandwidth * bandwidth));
    }
    Eigen::Matrix3d normal_eq = design.transpose() * weight.asDiagonal() * design;
    const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(normal_eq, Eigen::EigenvaluesOnly);
    const double lo = eig.eigenvalues()[0];
    const double hi = eig.eigenvalues()[2];
    if (!(lo > 0.0) || hi / lo > 1e10) {
      normal_eq += 1e-8 * normal_eq.trace() * Eigen::Matrix3d::Identity();
      ++out.ridge_count;
    }
    // coeffs = (A^T W A)^-1 A^T W; rows 1 and 2 give the gradient.
    const Eigen::MatrixXd coeffs =
        normal_eq.ldlt().solve(design.transpose() * weight.asDiagonal());
    // Subtracting the row sum makes constants map to zero exactly, which the
    // unregularised fit already satisfies up to rounding.
    for (int c = 0; c < 2; ++c) {
      const double row_sum = coeffs.row(c + 1).sum();
      for (Eigen::Index j = 0; j < m; ++j) {
        double v = coeffs(c + 1, j);
        if (j == 0) v -= row_sum;
        triplets.emplace_back(i + c * n, ids[static_cast<std::size_t>(j)], v);
      }
    }
  }
  out.matrix.resize(2 * n, n);
  out.matrix.setFromTriplets(triplets.begin(), triplets.end());
  out.matrix.makeCompressed();
  return out;
}

namespace {

SparseMatrix j_matrix(Eigen::Index n) {
  std::vector<Eigen::Triplet<double>> t;
  t.reserve(static_cast<std::size_t>(2 * n));
  for (Eigen::Index i = 0; i < n; ++i) {
    t.emplace_back(i, n + i, -1.0);  // new e1 = -old e2
    t.emplace_back(n + i, i, 1.0);   // new e2 = old e1
  }
  SparseMatrix j(2 * n, 2 * n);
  j.setFromTriplets(t.begin(), t.end());
  return j;
}

}  // namespace

OperatorSet assemble_operators(const TangentFrames& frames, const GradientOperator& gradient,
                               std::size_t k) {
  const auto n = static_cast<Eigen::Index>(frames.size());
  if (gradient.matrix.rows() != 2 * n || gradient.matrix.cols() != n)
    throw ShapeError("assemble_operators: gradient must be 2N x N");
  OperatorSet ops;
  ops.k = k;
  ops.gradient = gradient.matrix;
  // Uniform quadrature weights 1/N on scalars and vectors cancel in the
  // adjoint M^-1 G^T M_v, leaving -G^T.
  ops.divergence = SparseMatrix(-SparseMatrix(gradient.matrix.transpose()));
  ops.curl = SparseMatrix(ops.divergence * j_matrix(n));
  ops.laplacian = SparseMatrix(ops.divergence * ops.gradient);
  ops.divergence.makeCompressed();
  ops.curl.makeCompressed();
  ops.laplacian.makeCompressed();
  return ops;
}

OperatorSet build_operators(const Points& points, std::size_t k) {
  const TangentFrames frames = build_tangent_frames(points, k);
  const GradientOperator grad = build_gradient(points, frames, k);
  return assemble_operators(frames, grad, k);
}

Eigen::MatrixXd rotate_j(const Eigen::MatrixXd& field) {
  if (field.rows() % 2 != 0) throw ShapeError("tangent field must have 2N rows");
  const Eigen::Index n = field.rows() / 2;
  Eigen::MatrixXd out(field.rows(), field.cols());
  out.topRows(n) = -field.bottomRows(n);
  out.bottomRows(n) = field.topRows(n);
  return out;
}

namespace {

void check_rows(Eigen::Index got, Eigen::Index want, const char* op) {
  if (got != want)
    throw ShapeError(std::string(op) + ": expected " + std::to_string(want) + " rows, got " +
                     std::to_string(got));
}

}  // namespace

Eigen::MatrixXd apply_gradient(const OperatorSet& ops, const Eigen::MatrixXd& scalars) {
  check_rows(scalars.rows(), ops.points(), "gradient");
  return ops.gradient * scalars;
}

Eigen::MatrixXd apply_divergence(const OperatorSet& ops, const Eigen::MatrixXd& field) {
  check_rows(field.rows(), 2 * ops.points(), "divergence");
  return ops.divergence * field;
}

Eigen::MatrixXd apply_curl(const OperatorSet& ops, const Eigen::MatrixXd& field) {
  check_rows(field.rows(), 2 * ops.points(), "curl");
  return ops.curl * field;
}

Eigen::MatrixXd apply_laplacian(const OperatorSet& ops, const Eigen::MatrixXd& scalars) {
  check_rows(scalars.rows(), ops.points(), "laplacian");
  return ops.laplacian * scalars;
}

Eigen::MatrixXd apply_vector_laplacian(const OperatorSet& ops, const Eigen::MatrixXd& field) {
  check_rows(field.rows(), 2 * ops.points(), "vector laplacian");
  return ops.gradient * (ops.divergence * field) -
         rotate_j(ops.gradient * (ops.curl * field));
}

}  // namespace ndesc
