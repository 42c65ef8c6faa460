#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "ndesc/rng.hpp"

namespace ndesc {

// N x 3 point coordinates, one point per row.
using Points = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

/// Bivariate polynomial height field f(x,y) = sum_{i+j<=d} a_ij x^i y^j.
///
/// Coefficients are stored densely for the lower triangle {(i,j) : i+j <= d},
/// grouped by the power of x: a_00..a_0d, a_10..a_1(d-1), ..., a_d0.
class Polynomial2D {
public:
  static constexpr int kMaxDegree = 6;

  Polynomial2D() : Polynomial2D(0) {}
  explicit Polynomial2D(int degree);
  Polynomial2D(int degree, std::vector<double> coeffs);

  static std::size_t coeff_count(int degree) {
    return static_cast<std::size_t>((degree + 1) * (degree + 2) / 2);
  }

  int degree() const { return degree_; }
  const std::vector<double>& coeffs() const { return coeffs_; }

  double coeff(int i, int j) const { return coeffs_[index(i, j)]; }
  double& coeff(int i, int j) { return coeffs_[index(i, j)]; }

  // Nested Horner evaluation: inner in y, outer in x.
  double operator()(double x, double y) const;

  // Partial derivative d^(dx+dy) f / dx^dx dy^dy as a new polynomial.
  Polynomial2D derivative(int dx, int dy) const;

  bool operator==(const Polynomial2D&) const = default;

private:
  std::size_t index(int i, int j) const;

  int degree_;
  std::vector<double> coeffs_;
};

struct PatchCloud {
  Points points;
  std::optional<std::size_t> origin_index;
  double domain_radius = 1.0;
  std::optional<std::uint64_t> source_id;

  std::size_t size() const { return static_cast<std::size_t>(points.rows()); }
};

struct PatchPair {
  PatchCloud a;
  PatchCloud b;
  std::uint64_t source_id = 0;
};

enum class QuadricKind { Spherical, Parabolic, Hyperbolic, Planar };

inline constexpr std::size_t kMinPatchPoints = 16;

/// Degree uniform in [degree_min, degree_max], coefficients i.i.d. uniform in
/// [-coeff_scale, coeff_scale]. Throws ConfigError on an invalid range.
Polynomial2D sample_polynomial(Rng& rng, int degree_min, int degree_max, double coeff_scale);

double eval_polynomial(const Polynomial2D& poly, double x, double y);

/// Samples n points uniformly on the disk of the given radius and lifts them
/// onto the polynomial. With include_origin, point 0 is (0, 0, a_00).
PatchCloud sample_patch(const Polynomial2D& poly, std::size_t n, double domain_radius, Rng& rng,
                        bool include_origin = false);

PatchPair make_pair(const Polynomial2D& poly, std::size_t n1, std::size_t n2, Rng& rng,
                    double domain_radius = 1.0, std::uint64_t source_id = 0);

/// Adds N(0, sigma^2) noise to the z column only.
PatchCloud add_z_noise(const PatchCloud& patch, double sigma, Rng& rng);

/// z = k1 x^2 + k2 y^2 + small random linear terms, with the curvature sign
/// pattern of the requested class and |k| in [0.3, 1.5] * curvature_scale.
Polynomial2D quadric_family(QuadricKind kind, double curvature_scale, Rng& rng);

const char* quadric_name(QuadricKind kind);

/// Coefficient-wise (1-t) a + t b. Throws ShapeError on degree mismatch.
Polynomial2D interpolate_polys(const Polynomial2D& a, const Polynomial2D& b, double t);

struct MongeCurvature {
  double gaussian = 0.0;
  double mean = 0.0;
};

// Curvatures of the graph surface (x, y, f(x,y)) at the given parameter point.
MongeCurvature monge_curvature(const Polynomial2D& poly, double x, double y);

// ---------------------------------------------------------------------------
// Datasets

struct GenerationConfig {
  int degree_min = 2;
  int degree_max = 4;
  double coeff_scale = 1.0;
  std::size_t n_min = 128;
  std::size_t n_max = 512;
  double domain_radius = 1.0;

  void validate() const;
  bool operator==(const GenerationConfig&) const = default;
};

struct Dataset {
  std::uint64_t seed = 0;
  GenerationConfig config;
  std::vector<PatchPair> pairs;
};

inline constexpr int kDatasetVersion = 1;

/// Generates n_pairs pairs. Pair i draws from its own stream derived from
/// (seed, i), so the result does not depend on generation order. Coordinates
/// are rounded to 32-bit storage precision.
Dataset generate_dataset(const GenerationConfig& config, std::size_t n_pairs, std::uint64_t seed,
                         unsigned threads = 1);

/// Writes `manifest.json` and `points.f32le` into dir (created if missing).
void write_dataset(const Dataset& dataset, const std::filesystem::path& dir);

/// Reads and validates a dataset directory; throws IoError naming the first
/// offending record.
Dataset read_dataset(const std::filesystem::path& dir);

}  // namespace ndesc
