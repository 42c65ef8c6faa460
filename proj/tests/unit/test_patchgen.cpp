#include <cmath>
#include <fstream>

#include "ndesc/errors.hpp"
#include "ndesc/patchgen.hpp"
#include "test_util.hpp"

using namespace ndesc;

namespace {

// Direct power-sum evaluation.
double naive_eval(const Polynomial2D& p, double x, double y) {
  double s = 0.0;
  for (int i = 0; i <= p.degree(); ++i)
    for (int j = 0; i + j <= p.degree(); ++j) s += p.coeff(i, j) * std::pow(x, i) * std::pow(y, j);
  return s;
}

}  // namespace

TEST(Polynomial, HornerMatchesPowerSum) {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const Polynomial2D p = sample_polynomial(rng, 1, 6, 2.0);
    const double x = rng.uniform(-1.5, 1.5), y = rng.uniform(-1.5, 1.5);
    EXPECT_NEAR(p(x, y), naive_eval(p, x, y), 1e-12 * (1.0 + std::abs(naive_eval(p, x, y))));
  }
}

TEST(Polynomial, DerivativeMatchesFiniteDifference) {
  Rng rng(2);
  const double h = 1e-5;
  for (int trial = 0; trial < 20; ++trial) {
    const Polynomial2D p = sample_polynomial(rng, 2, 4, 1.0);
    const double x = rng.uniform(-1, 1), y = rng.uniform(-1, 1);
    EXPECT_NEAR(p.derivative(1, 0)(x, y), (p(x + h, y) - p(x - h, y)) / (2 * h), 1e-7);
    EXPECT_NEAR(p.derivative(0, 1)(x, y), (p(x, y + h) - p(x, y - h)) / (2 * h), 1e-7);
    EXPECT_NEAR(p.derivative(1, 1)(x, y),
                (p(x + h, y + h) - p(x + h, y - h) - p(x - h, y + h) + p(x - h, y - h)) / (4 * h * h), 1e-4);
  }
}

TEST(Polynomial, InvalidRangesRejected) {
  Rng rng(3);
  EXPECT_THROW(sample_polynomial(rng, 0, 3, 1.0), ConfigError);
  EXPECT_THROW(sample_polynomial(rng, 4, 3, 1.0), ConfigError);
  EXPECT_THROW(sample_polynomial(rng, 2, 7, 1.0), ConfigError);
  EXPECT_THROW(Polynomial2D(2, std::vector<double>(5)), std::exception);
}

TEST(SamplePatch, PointsLieOnSurfaceInsideDisk) {
  Rng rng(4);
  const Polynomial2D p = sample_polynomial(rng, 2, 4, 1.0);
  const PatchCloud patch = sample_patch(p, 300, 0.7, rng, true);
  ASSERT_EQ(patch.size(), 300u);
  EXPECT_EQ(patch.origin_index, 0u);
  EXPECT_DOUBLE_EQ(patch.points(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(patch.points(0, 2), p.coeff(0, 0));
  for (Eigen::Index i = 0; i < patch.points.rows(); ++i) {
    const double x = patch.points(i, 0), y = patch.points(i, 1);
    EXPECT_LE(x * x + y * y, 0.49 + 1e-12);
    EXPECT_DOUBLE_EQ(patch.points(i, 2), p(x, y));
  }
}

TEST(SamplePatch, UniformOverDiskChiSquare) {
  // Area-uniform sampling: equal-area rings (radius^2 bins) and angular
  // sectors each receive n / bins points.
  Rng rng(5);
  const Polynomial2D p(1);
  const std::size_t n = 20000;
  const PatchCloud patch = sample_patch(p, n, 1.0, rng);
  constexpr int kBins = 10;
  int rings[kBins] = {}, sectors[kBins] = {};
  for (Eigen::Index i = 0; i < patch.points.rows(); ++i) {
    const double x = patch.points(i, 0), y = patch.points(i, 1);
    rings[std::min(kBins - 1, static_cast<int>((x * x + y * y) * kBins))]++;
    const double a = std::atan2(y, x) + std::numbers::pi;
    sectors[std::min(kBins - 1, static_cast<int>(a / (2 * std::numbers::pi) * kBins))]++;
  }
  const double expected = static_cast<double>(n) / kBins;
  double chi_r = 0.0, chi_s = 0.0;
  for (int b = 0; b < kBins; ++b) {
    chi_r += std::pow(rings[b] - expected, 2) / expected;
    chi_s += std::pow(sectors[b] - expected, 2) / expected;
  }
  // 9 degrees of freedom, 0.999 quantile = 27.88.
  EXPECT_LT(chi_r, 27.88);
  EXPECT_LT(chi_s, 27.88);
}

TEST(SamplePatch, RejectsTooFewPoints) {
  Rng rng(6);
  EXPECT_THROW(sample_patch(Polynomial2D(2), 15, 1.0, rng), ConfigError);
  EXPECT_THROW(sample_patch(Polynomial2D(2), 32, 0.0, rng), ConfigError);
}

TEST(Noise, OnlyZChangesWithExpectedSpread) {
  Rng rng(7);
  const PatchCloud clean = sample_patch(Polynomial2D(2), 5000, 1.0, rng);
  const PatchCloud noisy = add_z_noise(clean, 0.1, rng);
  EXPECT_TRUE(noisy.points.leftCols(2) == clean.points.leftCols(2));
  const Eigen::ArrayXd d = noisy.points.col(2) - clean.points.col(2);
  const double sd = std::sqrt((d - d.mean()).square().mean());
  EXPECT_NEAR(sd, 0.1, 0.005);
  EXPECT_NEAR(d.mean(), 0.0, 0.005);
  EXPECT_THROW(add_z_noise(clean, -1.0, rng), ConfigError);
}

TEST(Quadrics, CurvatureSignsMatchClass) {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const auto k_sph = monge_curvature(quadric_family(QuadricKind::Spherical, 1.0, rng), 0, 0);
    const auto k_par = monge_curvature(quadric_family(QuadricKind::Parabolic, 1.0, rng), 0, 0);
    const auto k_hyp = monge_curvature(quadric_family(QuadricKind::Hyperbolic, 1.0, rng), 0, 0);
    const auto k_pla = monge_curvature(quadric_family(QuadricKind::Planar, 1.0, rng), 0, 0);
    EXPECT_GT(k_sph.gaussian, 0.0);
    EXPECT_NEAR(k_par.gaussian, 0.0, 1e-12);
    EXPECT_GT(std::abs(k_par.mean), 0.0);
    EXPECT_LT(k_hyp.gaussian, 0.0);
    EXPECT_NEAR(k_pla.gaussian, 0.0, 1e-12);
    EXPECT_NEAR(k_pla.mean, 0.0, 1e-12);
  }
}

TEST(Quadrics, MongeCurvatureOfSphereCap) {
  // z = r - sqrt(r^2 - x^2 - y^2) has K = 1/r^2 and H = 1/r; its Taylor
  // polynomial to degree 2 matches at the origin.
  const double r = 2.0;
  Polynomial2D p(2);
  p.coeff(2, 0) = 0.5 / r;
  p.coeff(0, 2) = 0.5 / r;
  const MongeCurvature k = monge_curvature(p, 0, 0);
  EXPECT_NEAR(k.gaussian, 1.0 / (r * r), 1e-12);
  EXPECT_NEAR(k.mean, 1.0 / r, 1e-12);
}

TEST(Quadrics, InterpolationIsAffineInCoefficients) {
  Rng rng(9);
  const Polynomial2D a = quadric_family(QuadricKind::Hyperbolic, 1.0, rng);
  const Polynomial2D b = quadric_family(QuadricKind::Spherical, 1.0, rng);
  EXPECT_EQ(interpolate_polys(a, b, 0.0), a);
  EXPECT_EQ(interpolate_polys(a, b, 1.0), b);
  const Polynomial2D mid = interpolate_polys(a, b, 0.25);
  EXPECT_NEAR(mid(0.3, -0.2), 0.75 * a(0.3, -0.2) + 0.25 * b(0.3, -0.2), 1e-14);
  EXPECT_THROW(interpolate_polys(a, Polynomial2D(3), 0.5), ShapeError);
}

TEST(Dataset, GenerationIsDeterministicAndThreadIndependent) {
  GenerationConfig config;
  config.n_max = 200;
  const Dataset one = generate_dataset(config, 12, 77, 1);
  const Dataset three = generate_dataset(config, 12, 77, 3);
  ASSERT_EQ(one.pairs.size(), 12u);
  for (std::size_t i = 0; i < one.pairs.size(); ++i) {
    EXPECT_TRUE(one.pairs[i].a.points == three.pairs[i].a.points);
    EXPECT_TRUE(one.pairs[i].b.points == three.pairs[i].b.points);
    EXPECT_GE(one.pairs[i].a.size(), config.n_min);
    EXPECT_LE(one.pairs[i].a.size(), config.n_max);
  }
  const Dataset other = generate_dataset(config, 12, 78, 1);
  EXPECT_FALSE(other.pairs[0].a.points.rows() == one.pairs[0].a.points.rows() &&
               other.pairs[0].a.points == one.pairs[0].a.points);
}

TEST(Dataset, RoundTripIsLossless) {
  test::TempDir dir;
  GenerationConfig config;
  config.n_max = 150;
  const Dataset ds = generate_dataset(config, 9, 5, 1);
  write_dataset(ds, dir.path());
  const Dataset back = read_dataset(dir.path());
  EXPECT_EQ(back.seed, ds.seed);
  EXPECT_EQ(back.config, ds.config);
  ASSERT_EQ(back.pairs.size(), ds.pairs.size());
  for (std::size_t i = 0; i < ds.pairs.size(); ++i) {
    EXPECT_TRUE(back.pairs[i].a.points == ds.pairs[i].a.points);
    EXPECT_TRUE(back.pairs[i].b.points == ds.pairs[i].b.points);
    EXPECT_EQ(back.pairs[i].source_id, ds.pairs[i].source_id);
  }
}

TEST(Dataset, TruncatedBlobRejected) {
  test::TempDir dir;
  GenerationConfig config;
  config.n_max = 150;
  write_dataset(generate_dataset(config, 4, 5, 1), dir.path());
  const auto blob = dir / "points.f32le";
  std::filesystem::resize_file(blob, std::filesystem::file_size(blob) - 120);
  EXPECT_THROW(read_dataset(dir.path()), IoError);
}

TEST(Dataset, MissingOrMalformedManifestRejected) {
  test::TempDir dir;
  EXPECT_THROW(read_dataset(dir.path()), IoError);
  std::ofstream(dir / "manifest.json") << "{ not json";
  EXPECT_THROW(read_dataset(dir.path()), IoError);
}

TEST(Dataset, InvalidConfigRejected) {
  GenerationConfig config;
  config.n_min = 8;
  EXPECT_THROW(generate_dataset(config, 2, 1), ConfigError);
  config = {};
  config.degree_min = 5;
  config.degree_max = 3;
  EXPECT_THROW(generate_dataset(config, 2, 1), ConfigError);
}
