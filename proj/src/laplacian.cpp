#include <algorithm>
#include <map>

#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <Eigen/SparseCholesky>

#include "ndesc/errors.hpp"
#include "ndesc/geomcore.hpp"
#include "ndesc/rng.hpp"

namespace ndesc {

namespace {

constexpr double kCotClamp = 1e4;
// Above this vertex count the sparse shift-invert solver is used.
constexpr Eigen::Index kDenseLimit = 1200;

double clamped_cot(const Eigen::Vector3d& u, const Eigen::Vector3d& v) {
  const double cross = u.cross(v).norm();
  const double dot = u.dot(v);
  if (cross <= 0.0) return dot >= 0.0 ? kCotClamp : -kCotClamp;
  return std::clamp(dot / cross, -kCotClamp, kCotClamp);
}

// Deterministic sign: largest-magnitude entry (lowest index on ties) positive.
void fix_sign(Eigen::Ref<Eigen::VectorXd> v) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i)
    if (std::abs(v[i]) > std::abs(v[best]) * (1.0 + 1e-9)) best = i;
  if (v[best] < 0.0) v = -v;
}

}  // namespace

CotanLaplacian cotan_laplacian(const TriMesh& mesh) {
  mesh.validate();
  const auto n = static_cast<Eigen::Index>(mesh.vertex_count());
  std::map<std::pair<int, int>, int> edge_faces;
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(mesh.faces.size() * 12);
  Eigen::VectorXd mass = Eigen::VectorXd::Zero(n);

  for (const Face& f : mesh.faces) {
    const Eigen::Vector3d p[3] = {mesh.vertices.row(f[0]).transpose(),
                                  mesh.vertices.row(f[1]).transpose(),
                                  mesh.vertices.row(f[2]).transpose()};
    const double area = 0.5 * (p[1] - p[0]).cross(p[2] - p[0]).norm();
    for (int c = 0; c < 3; ++c) {
      const int a = (c + 1) % 3;
      const int b = (c + 2) % 3;
      const int i = f[static_cast<std::size_t>(a)];
      const int j = f[static_cast<std::size_t>(b)];
      const int count = ++edge_faces[{std::min(i, j), std::max(i, j)}];
      if (count > 2)
        throw TopologyError("non-manifold edge (" + std::to_string(std::min(i, j)) + ", " +
                            std::to_string(std::max(i, j)) + ") has more than two faces");
      const double w = 0.5 * clamped_cot(p[a] - p[c], p[b] - p[c]);
      triplets.emplace_back(i, j, -w);
      triplets.emplace_back(j, i, -w);
      triplets.emplace_back(i, i, w);
      triplets.emplace_back(j, j, w);
      mass[f[static_cast<std::size_t>(c)]] += area / 3.0;
    }
  }
  CotanLaplacian out;
  out.stiffness.resize(n, n);
  out.stiffness.setFromTriplets(triplets.begin(), triplets.end());
  out.stiffness.makeCompressed();
  out.lumped_mass = std::move(mass);
  return out;
}

namespace {

SpectralBasis finish_basis(const SparseMatrix& stiffness, const Eigen::VectorXd& mass,
                           const Eigen::MatrixXd& phi_in) {
  const Eigen::Index k = phi_in.cols();
  SpectralBasis basis;
  basis.lumped_mass = mass;
  basis.eigenfunctions = phi_in;
  basis.eigenvalues.resize(k);
  for (Eigen::Index j = 0; j < k; ++j) {
    auto phi = basis.eigenfunctions.col(j);
    const double norm2 = phi.dot(mass.cwiseProduct(phi));
    phi /= std::sqrt(norm2);
    fix_sign(phi);
    basis.eigenvalues[j] = phi.dot(stiffness * phi);
  }
  // Sort ascending (Rayleigh quotients may reorder near-ties).
  std::vector<Eigen::Index> order(static_cast<std::size_t>(k));
  for (Eigen::Index j = 0; j < k; ++j) order[static_cast<std::size_t>(j)] = j;
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    return basis.eigenvalues[a] < basis.eigenvalues[b];
  });
  SpectralBasis sorted = basis;
  for (Eigen::Index j = 0; j < k; ++j) {
    sorted.eigenvalues[j] = basis.eigenvalues[order[static_cast<std::size_t>(j)]];
    sorted.eigenfunctions.col(j) = basis.eigenfunctions.col(order[static_cast<std::size_t>(j)]);
  }
  const double top = std::max(std::abs(sorted.eigenvalues[k - 1]), 1e-300);
  for (Eigen::Index j = 0; j < k; ++j) {
    if (sorted.eigenvalues[j] < -1e-8 * top)
      throw NumericalError("negative eigenvalue " + std::to_string(sorted.eigenvalues[j]) +
                           " (stiffness not positive semidefinite)");
    sorted.eigenvalues[j] = std::max(sorted.eigenvalues[j], 0.0);
  }
  return sorted;
}

// Residual test: ||S phi - lambda M phi|| <= 1e-6 ||S phi||, with an absolute
// floor for (near-)zero modes where ||S phi|| itself vanishes.
double relative_residual(const SparseMatrix& stiffness, const Eigen::VectorXd& mass,
                         const Eigen::VectorXd& phi, double lambda, double s_norm) {
  const Eigen::VectorXd sphi = stiffness * phi;
  const double r = (sphi - lambda * mass.cwiseProduct(phi)).norm();
  const double scale = std::max(sphi.norm(), 1e-4 * s_norm * phi.norm());
  return r / scale;
}

}  // namespace

SpectralBasis eigendecompose(const SparseMatrix& stiffness, const Eigen::VectorXd& mass,
                             std::size_t k_req) {
  const Eigen::Index n = stiffness.rows();
  const auto k = static_cast<Eigen::Index>(k_req);
  if (stiffness.cols() != n || mass.size() != n)
    throw ShapeError("eigendecompose: stiffness and mass sizes disagree");
  if (k < 1 || k > n)
    throw ConfigError("eigendecompose: k=" + std::to_string(k_req) + " outside [1, " +
                      std::to_string(n) + "]");
  if ((mass.array() <= 0.0).any())
    throw DegenerateInputError("eigendecompose: lumped mass must be positive everywhere");

  const Eigen::VectorXd inv_sqrt_mass = mass.cwiseSqrt().cwiseInverse();
  const Eigen::VectorXd sqrt_mass = mass.cwiseSqrt();
  double s_norm = 0.0;
  for (Eigen::Index c = 0; c < n; ++c) {
    double col = 0.0;
    for (SparseMatrix::InnerIterator it(stiffness, c); it; ++it) col += std::abs(it.value());
    s_norm = std::max(s_norm, col);
  }

  SpectralBasis basis;
  if (n <= kDenseLimit) {
    const Eigen::MatrixXd dense = Eigen::MatrixXd(stiffness);
    const Eigen::MatrixXd sym =
        inv_sqrt_mass.asDiagonal() * (0.5 * (dense + dense.transpose())) * inv_sqrt_mass.asDiagonal();
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
    if (eig.info() != Eigen::Success) throw NumericalError("dense eigensolver failed to converge");
    basis = finish_basis(stiffness, mass,
                         inv_sqrt_mass.asDiagonal() * eig.eigenvectors().leftCols(k));
  } else {
    // Shift-invert subspace iteration on B = M^1/2 (S + sigma M)^-1 M^1/2,
    // whose largest eigenvalues 1 / (lambda + sigma) are the wanted modes.
    double diag_ratio = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
      diag_ratio = std::max(diag_ratio, stiffness.coeff(i, i) / mass[i]);
    const double sigma = std::max(1e-4 * diag_ratio, 1e-12);
    SparseMatrix shifted = stiffness;
    for (Eigen::Index i = 0; i < n; ++i) shifted.coeffRef(i, i) += sigma * mass[i];
    Eigen::SimplicialLDLT<SparseMatrix> solver(shifted);
    if (solver.info() != Eigen::Success)
      throw NumericalError("factorisation of shifted stiffness failed");

    const Eigen::Index p = std::min<Eigen::Index>(n, std::max<Eigen::Index>(2 * k, k + 30));
    auto apply_b = [&](const Eigen::MatrixXd& x) {
      Eigen::MatrixXd rhs = sqrt_mass.asDiagonal() * x;
      Eigen::MatrixXd y = solver.solve(rhs);
      return Eigen::MatrixXd(sqrt_mass.asDiagonal() * y);
    };
    auto orthonormalize = [&](const Eigen::MatrixXd& x) {
      Eigen::HouseholderQR<Eigen::MatrixXd> qr(x);
      return Eigen::MatrixXd(qr.householderQ() * Eigen::MatrixXd::Identity(n, x.cols()));
    };

    Rng rng(0x5eed);
    Eigen::MatrixXd x(n, p);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
    Eigen::MatrixXd q = orthonormalize(x);
    Eigen::MatrixXd w = apply_b(q);
    Eigen::MatrixXd ritz;
    double worst = std::numeric_limits<double>::infinity();
    constexpr int kMaxIterations = 400;
    for (int iter = 0; iter < kMaxIterations; ++iter) {
      Eigen::MatrixXd h = q.transpose() * w;
      h = 0.5 * (h + h.transpose());
      const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> small(h);
      // Descending Ritz values.
      const Eigen::MatrixXd v = small.eigenvectors().rowwise().reverse();
      const Eigen::VectorXd mu = small.eigenvalues().reverse();
      ritz = q * v;
      const Eigen::MatrixXd bx = w * v;
      worst = 0.0;
      for (Eigen::Index j = 0; j < k; ++j)
        worst = std::max(worst, (bx.col(j) - mu[j] * ritz.col(j)).norm() / std::abs(mu[j]));
      if (worst < 1e-11) break;
      q = orthonormalize(bx);
      w = apply_b(q);
    }
    basis = finish_basis(stiffness, mass, inv_sqrt_mass.asDiagonal() * ritz.leftCols(k));
  }

  double achieved = 0.0;
  for (Eigen::Index j = 0; j < k; ++j)
    achieved = std::max(achieved, relative_residual(stiffness, mass, basis.eigenfunctions.col(j),
                                                    basis.eigenvalues[j], s_norm));
  if (!(achieved <= 1e-6))
    throw NumericalError("eigensolver did not converge: relative residual " +
                         std::to_string(achieved));
  return basis;
}

}  // namespace ndesc
