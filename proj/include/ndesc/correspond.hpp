#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "ndesc/geomcore.hpp"
#include "ndesc/network.hpp"

namespace ndesc {

/// map[i] is the vertex of shape B matched to vertex i of shape A.
using PointMap = std::vector<int>;

/// k_B x k_A matrix transporting spectral coefficients from A to B.
using FunctionalMap = Eigen::MatrixXd;

enum class MatchMetric { Cosine, Euclidean };

/// Per-vertex neural descriptors: K-nearest-neighbour patch around every
/// vertex, rescaled to unit radius (the training domain), canonically aligned,
/// then encoded. Rows are vertices.
/// `threads` only splits the vertex range; results do not depend on it.
Eigen::MatrixXd dense_descriptors(const Points& points, const Encoder& encoder, std::size_t k = 64,
                                  unsigned threads = 1);

/// Nearest row of `b` for each row of `a` (largest cosine or smallest
/// Euclidean distance); ties go to the lower index. Zero rows have cosine 0
/// with everything.
PointMap nn_match(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, MatchMetric metric = MatchMetric::Cosine);

/// Least-squares C (k x k) with Phi_A C^T ~ Pi Phi_B in the M_A inner
/// product, where Pi pulls back B's rows through `map`. With M_A-orthonormal
/// bases this is C = (Phi_A^T M_A Pi Phi_B)^T.
FunctionalMap pointmap_to_fmap(const SpectralBasis& a, const SpectralBasis& b, const PointMap& map,
                               std::size_t k);

struct ZoomOutParams {
  std::size_t k0 = 10;
  std::size_t step = 5;
  std::optional<std::size_t> k_max;  // default min(100, |V| - 2) over both shapes
};

/// Spectral upsampling: for k = k0, k0 + step, ..., k_max, convert the map to
/// C_k and re-match rows of Phi_A,k C_k^T against rows of Phi_B,k.
PointMap zoomout(const SpectralBasis& a, const SpectralBasis& b, const PointMap& init,
                 const ZoomOutParams& params = {});

struct ErrorCurve {
  std::vector<double> thresholds;
  std::vector<double> fraction;  // share of vertices with error <= threshold
  double mean_error = 0.0;       // normalized by sqrt(area of B)
  Eigen::VectorXd errors;        // per A-vertex
};

/// Thresholds 0, 0.0025, ..., 0.25.
std::vector<double> default_thresholds();

/// Edge-graph geodesic error between map(v) and gt(v) on mesh B, divided by
/// sqrt(area(B)). Throws TopologyError if B is disconnected.
ErrorCurve geodesic_error_curve(const PointMap& map, const PointMap& gt, const TriMesh& mesh_b,
                                const std::vector<double>& thresholds = default_thresholds());

/// Shape A's spectral basis: cotan Laplacian of the mesh, k smallest pairs.
SpectralBasis mesh_basis(const TriMesh& mesh, std::size_t k);

// Plain text, one 0-based target index per line.
PointMap read_pointmap(const std::filesystem::path& path, std::optional<std::size_t> target_count = {});
void write_pointmap(const std::filesystem::path& path, const PointMap& map);
/// Columns threshold,fraction.
void write_error_curve_csv(const std::filesystem::path& path, const ErrorCurve& curve);

}  // namespace ndesc
