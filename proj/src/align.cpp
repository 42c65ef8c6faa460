#include <Eigen/Eigenvalues>

#include "ndesc/errors.hpp"
#include "ndesc/geomcore.hpp"

namespace ndesc {

Rotation3::Rotation3(const Eigen::Matrix3d& matrix) : matrix_(matrix) {
  const double orth = (matrix.transpose() * matrix - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  const double det = matrix.determinant();
  if (!(orth <= 1e-10) || !(std::abs(det - 1.0) <= 1e-10))
    throw NumericalError("matrix is not a proper rotation (orthogonality error " +
                         std::to_string(orth) + ", det " + std::to_string(det) + ")");
}

namespace {

// Orients `axis` so the third central moment of the coordinates along it is
// non-negative, or, for near-symmetric distributions, so that the farthest
// point has a non-negative coordinate.
Eigen::Vector3d orient_axis(const Points& centered, Eigen::Vector3d axis) {
  const Eigen::VectorXd coord = centered * axis;
  const double moment = coord.array().cube().mean();
  if (std::abs(moment) >= 1e-9) return moment < 0.0 ? -axis : axis;
  Eigen::Index far = 0;
  centered.rowwise().squaredNorm().maxCoeff(&far);
  return coord[far] < 0.0 ? -axis : axis;
}

}  // namespace

AlignedPatch canonical_align(const PatchCloud& patch) {
  const Points& pts = patch.points;
  if (pts.rows() == 0) throw DegenerateInputError("cannot align an empty patch");

  const Eigen::Vector3d centroid = pts.colwise().mean().transpose();
  const Points centered = pts.rowwise() - centroid.transpose();
  const Eigen::Matrix3d cov = centered.transpose() * centered / static_cast<double>(pts.rows());

  const double scale = std::max(1.0, pts.cwiseAbs().maxCoeff());
  if (cov.trace() <= 1e-24 * scale * scale)
    throw DegenerateInputError("patch covariance is numerically zero (all points coincide)");

  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
  // Eigen sorts ascending; principal axes by descending variance.
  Eigen::Vector3d major = eig.eigenvectors().col(2);
  Eigen::Vector3d normal = eig.eigenvectors().col(0);
  major = orient_axis(centered, major);
  normal = orient_axis(centered, normal);
  const Eigen::Vector3d middle = normal.cross(major).normalized();

  Eigen::Matrix3d rot;
  rot.row(0) = major.transpose();
  rot.row(1) = middle.transpose();
  // major x middle == normal; recomputed so det(R) = 1 holds to rounding.
  rot.row(2) = major.cross(middle).normalized().transpose();

  AlignedPatch out{patch, Rotation3(rot), centroid};
  out.patch.points = centered * rot.transpose();
  return out;
}

NormalField estimate_normals(const Points& points, std::size_t k) {
  if (k < 3) throw ConfigError("normal estimation needs k >= 3");
  const auto n = static_cast<std::size_t>(points.rows());
  NormalField field;
  field.normals.resize(points.rows(), 3);
  if (n == 0) return field;
  const std::size_t kk = std::min(k, n - 1);
  const KdTree tree(points);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    const auto nb = tree.knn(points.row(row).transpose(), kk, i);
    Eigen::Vector3d mean = points.row(row).transpose();
    for (int j : nb) mean += points.row(j).transpose();
    mean /= static_cast<double>(nb.size() + 1);
    const Eigen::Vector3d d0 = points.row(row).transpose() - mean;
    Eigen::Matrix3d cov = d0 * d0.transpose();
    for (int j : nb) {
      const Eigen::Vector3d d = points.row(j).transpose() - mean;
      cov += d * d.transpose();
    }
    const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
    const Eigen::Vector3d ev = eig.eigenvalues();
    Eigen::Vector3d normal = eig.eigenvectors().col(0);
    if (!(ev[1] > 1e-12 * std::max(ev[2], 1e-300)) || !normal.allFinite()) {
      normal = Eigen::Vector3d::UnitZ();
      ++field.fallback_count;
    }
    if (normal.z() < 0.0) normal = -normal;
    field.normals.row(row) = normal.normalized().transpose();
  }
  return field;
}

}  // namespace ndesc
