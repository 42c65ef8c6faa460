#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <Eigen/Eigenvalues>

#include "ndesc/errors.hpp"
#include "ndesc/geomcore.hpp"
#include "test_util.hpp"

using namespace ndesc;
using ndesc::test::TempDir;

namespace {

Points random_points(std::size_t n, Rng& rng) {
  Points p(static_cast<Eigen::Index>(n), 3);
  for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = rng.uniform(-1, 1);
  return p;
}

// Brute-force k nearest neighbours with the same tie rule (distance, index).
std::vector<int> brute_knn(const Points& p, const Eigen::Vector3d& q, std::size_t k, int exclude) {
  std::vector<std::pair<double, int>> d;
  for (Eigen::Index i = 0; i < p.rows(); ++i)
    if (i != exclude) d.emplace_back((p.row(i).transpose() - q).squaredNorm(), static_cast<int>(i));
  std::sort(d.begin(), d.end());
  std::vector<int> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(d[i].second);
  return out;
}

}  // namespace

TEST(Rotation, RejectsNonRotations) {
  EXPECT_NO_THROW(Rotation3(Eigen::Matrix3d::Identity()));
  Eigen::Matrix3d reflect = Eigen::Matrix3d::Identity();
  reflect(2, 2) = -1;
  EXPECT_THROW(Rotation3{reflect}, NumericalError);
  EXPECT_THROW(Rotation3{Eigen::Matrix3d::Identity() * 2.0}, NumericalError);
}

TEST(KdTree, MatchesBruteForce) {
  Rng rng(11);
  const Points p = random_points(500, rng);
  const KdTree tree(p);
  for (int q = 0; q < 50; ++q) {
    const Eigen::Vector3d query(rng.uniform(-1.2, 1.2), rng.uniform(-1.2, 1.2), rng.uniform(-1.2, 1.2));
    EXPECT_EQ(tree.knn(query, 12), brute_knn(p, query, 12, -1));
  }
  for (std::size_t i = 0; i < 500; i += 37)
    EXPECT_EQ(knn(p, i, 8), brute_knn(p, p.row(static_cast<Eigen::Index>(i)).transpose(), 8, static_cast<int>(i)));
}

TEST(KdTree, TiesResolveToLowerIndex) {
  Points p(6, 3);
  p << 1, 0, 0, -1, 0, 0, 0, 1, 0, 0, -1, 0, 0, 0, 1, 0, 0, 0;
  const KdTree tree(p);
  EXPECT_EQ(tree.knn(Eigen::Vector3d::Zero(), 3, 5), (std::vector<int>{0, 1, 2}));
}

TEST(KdTree, KnnTableAndErrors) {
  Rng rng(12);
  const Points p = random_points(60, rng);
  const auto table = knn_table(p, 5);
  ASSERT_EQ(table.rows(), 60);
  for (Eigen::Index i = 0; i < 60; ++i) {
    const auto expect = brute_knn(p, p.row(i).transpose(), 5, static_cast<int>(i));
    for (int c = 0; c < 5; ++c) EXPECT_EQ(table(i, c), expect[static_cast<std::size_t>(c)]);
  }
  EXPECT_THROW(knn(p, 0, 60), ConfigError);
}

TEST(VertexPatch, CentredOnVertexWithOriginFirst) {
  Rng rng(13);
  const Points p = random_points(200, rng);
  const PatchCloud patch = extract_vertex_patch(p, 17, 30);
  ASSERT_EQ(patch.size(), 31u);
  EXPECT_EQ(patch.origin_index, 0u);
  EXPECT_TRUE(patch.points.row(0).isZero());
  EXPECT_THROW(extract_vertex_patch(p, 0, 200), ConfigError);
}

TEST(CanonicalAlign, InvariantToRigidMotion) {
  Rng rng(14);
  for (int trial = 0; trial < 10; ++trial) {
    const Polynomial2D poly = sample_polynomial(rng, 2, 4, 1.0);
    const PatchCloud patch = sample_patch(poly, 300, 1.0, rng);
    const Eigen::Matrix3d r = test::random_rotation(rng);
    const Eigen::RowVector3d t(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5));
    PatchCloud moved = patch;
    moved.points = (patch.points * r.transpose()).rowwise() + t;
    const AlignedPatch a = canonical_align(patch);
    const AlignedPatch b = canonical_align(moved);
    EXPECT_LT((a.patch.points - b.patch.points).cwiseAbs().maxCoeff(), 1e-8) << "trial " << trial;
    EXPECT_NEAR(a.rotation.matrix().determinant(), 1.0, 1e-12);
  }
}

TEST(CanonicalAlign, AxesOrderedByVariance) {
  Rng rng(15);
  const PatchCloud patch = sample_patch(sample_polynomial(rng, 2, 3, 0.5), 400, 1.0, rng);
  const Points& q = canonical_align(patch).patch.points;
  const Eigen::RowVector3d mean = q.colwise().mean();
  EXPECT_LT(mean.norm(), 1e-12);
  const Eigen::Matrix3d cov = (q.rowwise() - mean).transpose() * (q.rowwise() - mean);
  EXPECT_GE(cov(0, 0), cov(1, 1));
  EXPECT_GE(cov(1, 1), cov(2, 2));
  EXPECT_LT(std::abs(cov(0, 1)) + std::abs(cov(0, 2)) + std::abs(cov(1, 2)), 1e-8 * cov.trace());
}

TEST(Delaunay, EmptyCircumcircleProperty) {
  Rng rng(16);
  const Points p = random_points(150, rng);
  const Triangulation tri = delaunay_2d(p);
  const TriMesh& m = tri.mesh;
  ASSERT_NO_THROW(m.validate());
  // Euler: a triangulation of a point set in general position with h hull
  // vertices has 2n - 2 - h faces; check the bound loosely.
  EXPECT_GT(m.face_count(), 150u);
  EXPECT_LT(m.face_count(), 2u * 150u);
  for (const Face& f : m.faces) {
    const Eigen::Vector2d a = m.vertices.row(f[0]).head<2>(), b = m.vertices.row(f[1]).head<2>(),
                          c = m.vertices.row(f[2]).head<2>();
    const double orient = (b - a).x() * (c - a).y() - (b - a).y() * (c - a).x();
    EXPECT_GT(orient, 0.0);  // counter-clockwise
    for (Eigen::Index v = 0; v < m.vertices.rows(); ++v) {
      if (v == f[0] || v == f[1] || v == f[2]) continue;
      const Eigen::Vector2d d = m.vertices.row(v).head<2>();
      Eigen::Matrix3d in;
      in << a.x() - d.x(), a.y() - d.y(), (a - d).squaredNorm(), b.x() - d.x(), b.y() - d.y(),
          (b - d).squaredNorm(), c.x() - d.x(), c.y() - d.y(), (c - d).squaredNorm();
      EXPECT_LE(in.determinant(), 1e-12) << "vertex " << v << " inside a circumcircle";
    }
  }
}

TEST(Delaunay, DuplicatesMergedAndDegenerateRejected) {
  Points p(5, 3);
  p << 0, 0, 0, 1, 0, 0, 0, 1, 0, 1, 0, 0, 1, 1, 0;
  const Triangulation tri = delaunay_2d(p);
  EXPECT_EQ(tri.mesh.vertex_count(), 4u);
  EXPECT_EQ(tri.vertex_of_input[1], tri.vertex_of_input[3]);
  Points line(4, 3);
  line << 0, 0, 0, 1, 0, 0, 2, 0, 0, 3, 0, 0;
  EXPECT_THROW(delaunay_2d(line), DegenerateInputError);
}

TEST(CotanLaplacian, RowSumsSymmetryAndPsd) {
  Rng rng(17);
  const TriMesh mesh = delaunay_2d(sample_patch(sample_polynomial(rng, 2, 4, 1.0), 300, 1.0, rng).points).mesh;
  const CotanLaplacian lap = cotan_laplacian(mesh);
  const Eigen::MatrixXd s(lap.stiffness);
  EXPECT_LT((s * Eigen::VectorXd::Ones(s.rows())).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT((s - s.transpose()).cwiseAbs().maxCoeff(), 1e-12);
  const double norm = s.norm();
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::VectorXd f(s.rows());
    for (Eigen::Index i = 0; i < f.size(); ++i) f[i] = rng.normal();
    EXPECT_GE(f.dot(s * f), -1e-8 * norm * f.squaredNorm());
  }
  EXPECT_NEAR(lap.lumped_mass.sum(), mesh_area(mesh), 1e-10);
}

TEST(CotanLaplacian, ReproducesDirichletEnergyOfLinearFunction) {
  // For f = x on a flat domain the Dirichlet energy f^T S f equals the area.
  const TriMesh mesh = test::flat_grid(9, 1.0);
  const CotanLaplacian lap = cotan_laplacian(mesh);
  const Eigen::VectorXd x = mesh.vertices.col(0);
  EXPECT_NEAR(x.dot(lap.stiffness * x), 4.0, 1e-10);
}

TEST(Eigendecompose, MatchesDenseGeneralizedSolver) {
  Rng rng(18);
  const TriMesh mesh = delaunay_2d(sample_patch(sample_polynomial(rng, 2, 3, 1.0), 120, 1.0, rng).points).mesh;
  const CotanLaplacian lap = cotan_laplacian(mesh);
  const SpectralBasis basis = eigendecompose(lap.stiffness, lap.lumped_mass, 12);
  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> dense(Eigen::MatrixXd(lap.stiffness),
                                                                   Eigen::MatrixXd(lap.lumped_mass.asDiagonal()));
  for (int i = 0; i < 12; ++i) EXPECT_NEAR(basis.eigenvalues[i], dense.eigenvalues()[i], 1e-8 * (1 + dense.eigenvalues()[i]));
  const Eigen::MatrixXd gram = basis.eigenfunctions.transpose() * lap.lumped_mass.asDiagonal() * basis.eigenfunctions;
  EXPECT_LT((gram - Eigen::MatrixXd::Identity(12, 12)).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Eigendecompose, LargeMeshIterativePathMatchesResiduals) {
  const TriMesh mesh = make_icosphere(4);
  ASSERT_EQ(mesh.vertex_count(), 2562u);
  const CotanLaplacian lap = cotan_laplacian(mesh);
  const SpectralBasis basis = eigendecompose(lap.stiffness, lap.lumped_mass, 16);
  for (Eigen::Index i = 0; i < 16; ++i) {
    const Eigen::VectorXd phi = basis.eigenfunctions.col(i);
    const Eigen::VectorXd r = lap.stiffness * phi - basis.eigenvalues[i] * lap.lumped_mass.cwiseProduct(phi);
    EXPECT_LT(r.norm(), 1e-6 * (lap.stiffness * phi).norm() + 1e-9) << "pair " << i;
  }
  // Spherical harmonics: l(l+1) with multiplicity 2l+1.
  const double expected[16] = {0, 2, 2, 2, 6, 6, 6, 6, 6, 12, 12, 12, 12, 12, 12, 12};
  EXPECT_NEAR(basis.eigenvalues[0], 0.0, 1e-8);
  for (int i = 1; i < 16; ++i) EXPECT_NEAR(basis.eigenvalues[i], expected[i], 0.1 * expected[i]);
}

TEST(Geodesic, MatchesFloydWarshall) {
  Rng rng(19);
  const TriMesh mesh = delaunay_2d(sample_patch(sample_polynomial(rng, 2, 4, 1.0), 140, 1.0, rng).points).mesh;
  const Eigen::MatrixXd fw = test::floyd_warshall(mesh);
  for (std::size_t s = 0; s < mesh.vertex_count(); s += 13) {
    const GeodesicField g = geodesic_distances(mesh, s);
    EXPECT_EQ(g.unreachable, 0u);
    EXPECT_LT((g.distance - fw.col(static_cast<Eigen::Index>(s))).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Geodesic, DisconnectedComponentsUnreachable) {
  TriMesh mesh;
  mesh.vertices.resize(6, 3);
  mesh.vertices << 0, 0, 0, 1, 0, 0, 0, 1, 0, 5, 0, 0, 6, 0, 0, 5, 1, 0;
  mesh.faces = {{0, 1, 2}, {3, 4, 5}};
  const GeodesicField g = geodesic_distances(mesh, 0);
  EXPECT_EQ(g.unreachable, 3u);
  EXPECT_TRUE(std::isinf(g.distance[4]));
}

TEST(Mesh, AreaNormalizationAndEdges) {
  const TriMesh grid = test::flat_grid(5, 1.0);
  EXPECT_NEAR(mesh_area(grid), 4.0, 1e-12);
  EXPECT_NEAR(mesh_area(normalize_mesh(grid)), 1.0, 1e-12);
  // 5x5 grid with diagonals: 2*5*4 axis edges + 16 diagonals.
  EXPECT_EQ(mesh_edges(grid).size(), 56u);
}

TEST(Mesh, ValidationRejectsBadFaces) {
  TriMesh mesh = test::flat_grid(3);
  mesh.faces.push_back({0, 1, 99});
  EXPECT_THROW(mesh.validate(), TopologyError);
  mesh = test::flat_grid(3);
  mesh.faces.push_back({0, 0, 1});
  EXPECT_THROW(mesh.validate(), TopologyError);
}

TEST(MeshIo, OffAndPlyRoundTrip) {
  TempDir dir;
  const TriMesh mesh = make_icosphere(1);
  write_off(mesh, dir / "s.off");
  const TriMesh back = read_mesh(dir / "s.off");
  ASSERT_EQ(back.vertex_count(), mesh.vertex_count());
  EXPECT_LT((back.vertices - mesh.vertices).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(back.faces, mesh.faces);

  std::ofstream ply(dir / "t.ply");
  ply << "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\n"
         "element face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n";
  ply.close();
  const TriMesh t = read_mesh(dir / "t.ply");
  EXPECT_EQ(t.vertex_count(), 3u);
  EXPECT_EQ(t.face_count(), 1u);
}

TEST(MeshIo, ErrorsAreIoErrors) {
  TempDir dir;
  EXPECT_THROW(read_mesh(dir / "missing.off"), IoError);
  std::ofstream(dir / "bad.off") << "OFF\n3 1 0\n0 0 0\n1 0\n";
  EXPECT_THROW(read_mesh(dir / "bad.off"), IoError);
  std::ofstream(dir / "x.obj") << "v 0 0 0\n";
  EXPECT_THROW(read_mesh(dir / "x.obj"), IoError);
}
