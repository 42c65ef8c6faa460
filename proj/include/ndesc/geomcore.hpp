#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <limits>
#include <optional>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/SparseCore>

#include "ndesc/patchgen.hpp"

namespace ndesc {

using SparseMatrix = Eigen::SparseMatrix<double>;
using Face = std::array<int, 3>;

struct TriMesh {
  Points vertices;
  std::vector<Face> faces;

  std::size_t vertex_count() const { return static_cast<std::size_t>(vertices.rows()); }
  std::size_t face_count() const { return faces.size(); }

  // Throws TopologyError / DegenerateInputError if indices are out of range,
  // a face repeats a vertex or a coordinate is not finite.
  void validate() const;
};

/// Eigenpairs of S phi = lambda M phi, ascending, M-orthonormal columns.
struct SpectralBasis {
  Eigen::VectorXd eigenvalues;
  Eigen::MatrixXd eigenfunctions;  // |V| x k
  Eigen::VectorXd lumped_mass;

  Eigen::Index size() const { return eigenvalues.size(); }
};

/// Proper rotation (orthonormal, det +1).
class Rotation3 {
public:
  Rotation3() : matrix_(Eigen::Matrix3d::Identity()) {}
  // Throws NumericalError unless R^T R = I and det R = 1 to 1e-10.
  explicit Rotation3(const Eigen::Matrix3d& matrix);

  const Eigen::Matrix3d& matrix() const { return matrix_; }
  Eigen::Vector3d operator*(const Eigen::Vector3d& v) const { return matrix_ * v; }

private:
  Eigen::Matrix3d matrix_;
};

// ---------------------------------------------------------------------------
// Nearest neighbours

/// Exact k-d tree over a fixed point set. Results are ordered by ascending
/// distance with ties broken by lower index.
class KdTree {
public:
  explicit KdTree(const Points& points);

  std::vector<int> knn(const Eigen::Vector3d& query, std::size_t k,
                       std::optional<std::size_t> exclude = std::nullopt) const;

  std::size_t size() const { return static_cast<std::size_t>(points_->rows()); }

private:
  struct Node {
    int begin = 0;
    int end = 0;
    int axis = -1;  // -1 marks a leaf
    double split = 0.0;
    int left = -1;
    int right = -1;
  };

  int build(int begin, int end);

  const Points* points_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
};

/// k nearest neighbours of points[query_index], excluding the query itself.
/// Throws ConfigError if k >= N.
std::vector<int> knn(const Points& points, std::size_t query_index, std::size_t k);

/// N x k neighbour table (self excluded) for every point.
Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> knn_table(const Points& points,
                                                                             std::size_t k);

/// The vertex plus its K nearest neighbours, translated so the vertex sits at
/// the origin. origin_index is 0. Throws ConfigError if N <= K.
PatchCloud extract_vertex_patch(const Points& points, std::size_t vertex_index, std::size_t k = 64);
PatchCloud extract_vertex_patch(const KdTree& tree, const Points& points, std::size_t vertex_index,
                                std::size_t k = 64);

// ---------------------------------------------------------------------------
// Canonical pose

struct AlignedPatch {
  PatchCloud patch;
  Rotation3 rotation;        // aligned = rotation * (p - centroid)
  Eigen::Vector3d centroid;
};

/// Principal-axis frame of the centred points: axes by descending variance.
/// Signs: the first and last axes are oriented so that the third central
/// moment along them is non-negative (falling back to the farthest point when
/// the moment is below 1e-9); the middle axis completes a right-handed frame.
AlignedPatch canonical_align(const PatchCloud& patch);

struct NormalField {
  Points normals;
  std::size_t fallback_count = 0;
};

/// Smallest-variance direction of each k-neighbourhood, oriented toward +z.
NormalField estimate_normals(const Points& points, std::size_t k);

// ---------------------------------------------------------------------------
// Meshes

struct Triangulation {
  TriMesh mesh;                          // vertices keep the input z values
  std::vector<int> vertex_of_input;      // input point -> mesh vertex (duplicates merged)
};

/// Delaunay triangulation of the (x, y) projection, faces counter-clockwise.
/// Throws DegenerateInputError when fewer than three distinct non-collinear
/// points remain.
Triangulation delaunay_2d(const Points& points);

struct CotanLaplacian {
  SparseMatrix stiffness;       // symmetric PSD, zero row sums
  Eigen::VectorXd lumped_mass;  // one third of incident triangle area
};

CotanLaplacian cotan_laplacian(const TriMesh& mesh);

/// k smallest eigenpairs of stiffness phi = lambda diag(mass) phi.
SpectralBasis eigendecompose(const SparseMatrix& stiffness, const Eigen::VectorXd& mass,
                             std::size_t k);

struct GeodesicField {
  Eigen::VectorXd distance;       // +inf where unreachable
  std::size_t unreachable = 0;
};

/// Dijkstra over the edge graph with Euclidean edge lengths.
GeodesicField geodesic_distances(const TriMesh& mesh, std::size_t source_vertex);

/// Unique undirected edges (i < j).
std::vector<std::array<int, 2>> mesh_edges(const TriMesh& mesh);

double mesh_area(const TriMesh& mesh);
/// Uniform scaling about the origin to unit total area.
TriMesh normalize_mesh(const TriMesh& mesh);

/// Subdivided icosahedron projected to the unit sphere (level 4: 2562 vertices).
TriMesh make_icosphere(int subdivisions);

// ---------------------------------------------------------------------------
// Mesh files (ASCII, positions and faces only)

TriMesh read_off(const std::filesystem::path& path);
TriMesh read_ply(const std::filesystem::path& path);
/// Dispatches on extension (.off / .ply).
TriMesh read_mesh(const std::filesystem::path& path);
void write_off(const TriMesh& mesh, const std::filesystem::path& path);

}  // namespace ndesc
