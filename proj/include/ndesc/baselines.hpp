#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ndesc/geomcore.hpp"
#include "ndesc/patchgen.hpp"

namespace ndesc {

/// Per-point descriptors of uniform width plus the parameters that made them.
struct DescriptorField {
  Eigen::MatrixXd values;          // one row per point
  std::string kind;                // "hks", "wks", "shot", "neural", ...
  std::vector<double> parameters;  // times, energies (then sigma), or bin counts
};

// ---------------------------------------------------------------------------
// Spectral descriptors

/// k_t(x, x) = sum_i exp(-lambda_i t) phi_i(x)^2 for each t.
Eigen::VectorXd hks(const SpectralBasis& basis, std::size_t vertex, std::span<const double> times);
/// Rows are vertices.
Eigen::MatrixXd hks_field(const SpectralBasis& basis, std::span<const double> times);
/// `count` times log-spaced over [4 ln10 / lambda_k, 4 ln10 / lambda_2].
std::vector<double> default_hks_times(const SpectralBasis& basis, std::size_t count = 16);

struct WksParams {
  std::vector<double> energies;
  double sigma = 0.0;
};

/// WKS(e, x) = sum_i w_i(e) phi_i(x)^2 with Gaussian weights in log-eigenvalue
/// normalized to sum to 1. Eigenvalues at or below 1e-9 lambda_max are skipped.
Eigen::VectorXd wks(const SpectralBasis& basis, std::size_t vertex, const WksParams& params);
Eigen::MatrixXd wks_field(const SpectralBasis& basis, const WksParams& params);
/// `count` energies spanning [log lambda_2, log lambda_k] inset by 2 sigma,
/// sigma = 7 x the raw energy spacing.
WksParams default_wks_params(const SpectralBasis& basis, std::size_t count = 32);

// ---------------------------------------------------------------------------
// SHOT-lite

struct ShotParams {
  double radius = 0.5;
  int spatial_bins = 8;  // octants of the local frame; fixed
  int angle_bins = 11;
};

/// 8 octants x `angle_bins` histogram of cos(n_i, n_center) over neighbours
/// within `radius`, L2-normalized. The local frame comes from the
/// distance-weighted covariance with majority sign disambiguation.
/// Throws DegenerateInputError with fewer than 10 points in the ball.
Eigen::VectorXd shot_lite(const Points& points, const Points& normals, std::size_t center,
                          const ShotParams& params = {});

// ---------------------------------------------------------------------------
// Patch-level evaluation (origin vertex of a height-field patch)

struct ClassicalConfig {
  std::size_t spectral_k = 30;
  std::size_t hks_count = 16;
  std::size_t wks_count = 32;
  double shot_radius = 0.5;  // fraction of the domain radius
  std::size_t normal_k = 16;
};

struct PatchMesh {
  TriMesh mesh;
  std::size_t origin_vertex = 0;
};

/// Delaunay mesh of the (x, y) projection, tracking the origin point.
/// Throws ConfigError when the patch has no origin index.
PatchMesh mesh_patch(const PatchCloud& patch);

struct ClassicalDescriptors {
  Eigen::VectorXd hks;
  Eigen::VectorXd wks;
  Eigen::VectorXd shot;
};

ClassicalDescriptors classical_patch_descriptors(const PatchCloud& patch, const ClassicalConfig& config = {});

// ---------------------------------------------------------------------------
// Analysis

struct PcaResult {
  Eigen::MatrixXd coords;      // N x out_dim
  Eigen::VectorXd ratios;      // explained-variance ratios, descending
  Eigen::RowVectorXd mean;
  Eigen::MatrixXd axes;        // D x out_dim, orthonormal columns
};

/// Mean-centred projection onto the top principal axes. Each axis is signed
/// so its largest-magnitude loading is positive. Throws DegenerateInputError
/// on zero total variance and ConfigError with fewer than out_dim + 1 rows.
PcaResult descriptor_pca(const Eigen::MatrixXd& descriptors, int out_dim = 2);

/// Mean silhouette coefficient with Euclidean distances; points in singleton
/// clusters score 0. Needs at least two distinct labels.
double silhouette_score(const Eigen::MatrixXd& points, std::span<const int> labels);

/// One row per point; header "index,d0,d1,...".
void write_descriptor_csv(const std::filesystem::path& path, const DescriptorField& field);

}  // namespace ndesc
