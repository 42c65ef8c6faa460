#include "ndesc/experiments.hpp"

#include <cmath>

#include "ndesc/errors.hpp"
#include "ndesc/parallel.hpp"

namespace ndesc {

namespace {

constexpr QuadricKind kClasses[4] = {QuadricKind::Spherical, QuadricKind::Parabolic, QuadricKind::Hyperbolic,
                                     QuadricKind::Planar};

// Rows: neural, hks, wks, shot descriptors of each patch.
std::vector<Eigen::MatrixXd> describe(const std::vector<PatchCloud>& patches, const Encoder& encoder,
                                      const ClassicalConfig& classical, unsigned threads) {
  const auto n = static_cast<Eigen::Index>(patches.size());
  std::vector<Eigen::VectorXd> rows[4];
  for (auto& r : rows) r.resize(patches.size());
  parallel_for(patches.size(), threads, [&](std::size_t i) {
    rows[0][i] = encoder.encode(patches[i]);
    const ClassicalDescriptors c = classical_patch_descriptors(patches[i], classical);
    rows[1][i] = c.hks;
    rows[2][i] = c.wks;
    rows[3][i] = c.shot;
  });
  std::vector<Eigen::MatrixXd> out;
  for (auto& r : rows) {
    Eigen::MatrixXd m(n, r.front().size());
    for (Eigen::Index i = 0; i < n; ++i) m.row(i) = r[static_cast<std::size_t>(i)].transpose();
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace

double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double na = a.norm();
  const double nb = b.norm();
  return na > 0.0 && nb > 0.0 ? a.dot(b) / (na * nb) : 0.0;
}

std::vector<LabelledPatch> make_cluster_patches(const ClusterConfig& config) {
  if (config.per_class < 2) throw ConfigError("cluster eval needs at least two patches per class");
  if (config.points < kMinPatchPoints) throw ConfigError("cluster eval patches need at least 16 points");
  if (!(config.noise_sigma >= 0.0)) throw ConfigError("noise sigma must be non-negative");
  std::vector<LabelledPatch> out;
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t i = 0; i < config.per_class; ++i) {
      Rng rng(derive_seed(config.seed, c * config.per_class + i));
      const Polynomial2D poly = quadric_family(kClasses[c], config.curvature_scale, rng);
      const PatchCloud clean = sample_patch(poly, config.points, config.domain_radius, rng, true);
      out.push_back({add_z_noise(clean, config.noise_sigma, rng), kClasses[c]});
    }
  return out;
}

ClusterResult run_cluster_eval(const Encoder& encoder, const ClusterConfig& config, unsigned threads) {
  const auto samples = make_cluster_patches(config);
  std::vector<PatchCloud> patches;
  ClusterResult result;
  for (const auto& s : samples) {
    patches.push_back(s.patch);
    result.labels.push_back(static_cast<int>(s.kind));
  }
  const auto descriptors = describe(patches, encoder, config.classical, threads);
  for (std::size_t m = 0; m < kMethods.size(); ++m) {
    MethodEmbedding e;
    e.method = kMethods[m];
    e.descriptors = descriptors[m];
    e.pca = descriptor_pca(e.descriptors, 2);
    e.silhouette = silhouette_score(e.pca.coords, result.labels);
    result.methods.push_back(std::move(e));
  }

  Eigen::MatrixXd stats(static_cast<Eigen::Index>(patches.size()), 3);
  for (std::size_t i = 0; i < patches.size(); ++i) {
    const Eigen::ArrayXd z = patches[i].points.col(2).array();
    const double mean = z.mean();
    const double sd = std::sqrt((z - mean).square().mean());
    const double skew = sd > 0.0 ? ((z - mean) / sd).cube().mean() : 0.0;
    stats.row(static_cast<Eigen::Index>(i)) << mean, sd, skew;
  }
  result.raw_z_silhouette = silhouette_score(descriptor_pca(stats, 2).coords, result.labels);
  return result;
}

TransitionResult run_transition_eval(const Encoder& encoder, const TransitionConfig& config, unsigned threads) {
  if (config.steps < 3) throw ConfigError("transition eval needs at least three steps");
  if (config.points < kMinPatchPoints) throw ConfigError("transition patches need at least 16 points");
  Rng endpoints(derive_seed(config.seed, 0x7A5E));
  const Polynomial2D from = quadric_family(QuadricKind::Hyperbolic, config.curvature_scale, endpoints);
  const Polynomial2D to = quadric_family(QuadricKind::Spherical, config.curvature_scale, endpoints);

  TransitionResult result;
  std::vector<PatchCloud> patches;
  for (std::size_t s = 0; s < config.steps; ++s) {
    const double t = static_cast<double>(s) / static_cast<double>(config.steps - 1);
    result.t.push_back(t);
    Rng rng(derive_seed(config.seed, s));
    patches.push_back(sample_patch(interpolate_polys(from, to, t), config.points, config.domain_radius, rng, true));
  }
  const auto descriptors = describe(patches, encoder, config.classical, threads);
  const auto steps = static_cast<Eigen::Index>(config.steps);
  for (std::size_t m = 0; m < kMethods.size(); ++m) {
    TransitionMethod tm;
    tm.embedding.method = kMethods[m];
    tm.embedding.descriptors = descriptors[m];
    tm.embedding.pca = descriptor_pca(descriptors[m], 2);
    const Eigen::MatrixXd& d = descriptors[m];
    double consecutive = 0.0;
    for (Eigen::Index s = 0; s + 1 < steps; ++s) consecutive += cosine_similarity(d.row(s), d.row(s + 1));
    tm.consecutive_cosine = consecutive / static_cast<double>(steps - 1);
    // Expected cosine of a uniformly random pair of distinct steps, computed
    // exactly over all pairs.
    double all = 0.0;
    for (Eigen::Index i = 0; i < steps; ++i)
      for (Eigen::Index j = i + 1; j < steps; ++j) all += cosine_similarity(d.row(i), d.row(j));
    tm.random_pair_cosine = all / (0.5 * static_cast<double>(steps * (steps - 1)));
    result.methods.push_back(std::move(tm));
  }
  return result;
}

}  // namespace ndesc
