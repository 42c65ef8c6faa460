#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ndesc/baselines.hpp"
#include "ndesc/network.hpp"
#include "ndesc/patchgen.hpp"

namespace ndesc {

// Feature-space experiments on quadric patches: class clustering and a
// hyperbolic-to-spherical transition. Methods are reported in the order
// neural, hks, wks, shot.

inline const std::vector<std::string> kMethods{"neural", "hks", "wks", "shot"};

struct ClusterConfig {
  std::size_t per_class = 100;
  std::size_t points = 256;
  double noise_sigma = 0.05;
  double curvature_scale = 1.0;
  double domain_radius = 1.0;
  std::uint64_t seed = 0;
  ClassicalConfig classical;
};

struct LabelledPatch {
  PatchCloud patch;  // noisy, origin at index 0
  QuadricKind kind;
};

/// per_class noisy patches of each quadric class. Patch i of class c uses the
/// stream derive_seed(seed, c * per_class + i).
std::vector<LabelledPatch> make_cluster_patches(const ClusterConfig& config);

struct MethodEmbedding {
  std::string method;
  Eigen::MatrixXd descriptors;  // one row per patch / step
  PcaResult pca;
  double silhouette = 0.0;      // cluster-eval only
};

struct ClusterResult {
  std::vector<int> labels;
  std::vector<MethodEmbedding> methods;
  /// Silhouette of (mean, std, skew) of raw z, projected the same way. Low
  /// values mean the classes overlap before any descriptor is applied.
  double raw_z_silhouette = 0.0;
};

ClusterResult run_cluster_eval(const Encoder& encoder, const ClusterConfig& config, unsigned threads = 1);

struct TransitionConfig {
  std::size_t steps = 50;
  std::size_t points = 256;
  double curvature_scale = 1.0;
  double domain_radius = 1.0;
  std::uint64_t seed = 0;
  ClassicalConfig classical;
};

struct TransitionMethod {
  MethodEmbedding embedding;
  double consecutive_cosine = 0.0;  // mean over steps (s, s + 1)
  double random_pair_cosine = 0.0;  // mean over all distinct step pairs
};

struct TransitionResult {
  std::vector<double> t;
  std::vector<TransitionMethod> methods;
};

/// Interpolates a hyperbolic quadric into a spherical one over `steps` values
/// of t in [0, 1]. Every step is an independent sampling (stream
/// derive_seed(seed, step)) that includes the origin.
TransitionResult run_transition_eval(const Encoder& encoder, const TransitionConfig& config,
                                     unsigned threads = 1);

double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

}  // namespace ndesc
