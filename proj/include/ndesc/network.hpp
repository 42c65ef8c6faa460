#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "ndesc/autodiff.hpp"
#include "ndesc/deltaops.hpp"
#include "ndesc/patchgen.hpp"

namespace ndesc {

using NamedParameter = std::pair<std::string, ad::Tensor>;

struct Linear {
  ad::Tensor weight;  // in x out
  ad::Tensor bias;    // 1 x out (empty when bias-free)

  static Linear make(Eigen::Index in, Eigen::Index out, double init_std, Rng& rng, bool with_bias = true);
  ad::Tensor operator()(const ad::Tensor& x) const;
};

struct LayerNormParams {
  ad::Tensor gamma;
  ad::Tensor beta;

  static LayerNormParams make(Eigen::Index width);
  ad::Tensor operator()(const ad::Tensor& x) const;
};

struct EncoderConfig {
  std::array<int, 4> widths{64, 64, 128, 256};
  int out_dim = 2048;
  int operator_k = 20;

  int point_width() const { return widths[0] + widths[1] + widths[2] + widths[3]; }
  bool operator==(const EncoderConfig&) const = default;
};

/// A patch ready for the encoder: canonical point order and pose, spatial
/// operators and input features.
struct PreparedPatch {
  std::shared_ptr<const ad::RowSparse> gradient;
  std::shared_ptr<const ad::RowSparse> divergence;
  std::shared_ptr<const ad::RowSparse> curl;
  ad::Matrix features;  // N x 2: constant 1 and canonical z
};

/// Sorts points lexicographically (so the result is independent of input
/// order), optionally applies canonical_align, and builds the operators.
/// Throws ConfigError below 16 points.
PreparedPatch prepare_patch(const PatchCloud& patch, int operator_k, bool align = true);

/// Descriptor network: four operator blocks, per-point concatenation, mean and
/// max pooling, then a linear map to out_dim.
class Encoder {
public:
  Encoder(const EncoderConfig& config, std::uint64_t seed);

  const EncoderConfig& config() const { return config_; }

  /// 1 x 2 * point_width pooled features of one patch.
  ad::Tensor pooled(const PreparedPatch& patch) const;
  /// Per-point concatenated block outputs (N x point_width).
  ad::Tensor point_features(const PreparedPatch& patch) const;
  /// Final linear layer on stacked pooled rows.
  ad::Tensor project(const ad::Tensor& pooled_rows) const;
  ad::Tensor forward(const PreparedPatch& patch) const;

  /// Data-dependent initialization: sets the output bias so the mean
  /// descriptor over `patches` is zero. Pooled features are non-negative and
  /// share a large common component; without this every pair of descriptors
  /// has cosine near 1 and cosine comparisons only see a small residual.
  void center_output(const std::vector<PreparedPatch>& patches);

  /// Inference without graph recording.
  Eigen::VectorXd encode(const PatchCloud& patch, bool align = true) const;
  /// Row i is the descriptor of patches[i].
  Eigen::MatrixXd encode_all(const std::vector<PatchCloud>& patches, bool align = true) const;

  std::vector<NamedParameter> parameters() const;

private:
  struct Block {
    int scalar_in = 0;
    int vector_in = 0;
    int width = 0;
    Linear mlp1;
    LayerNormParams norm1;
    Linear mlp2;
    LayerNormParams norm2;
    Linear vector_map;  // bias-free: channel mixing must commute with rotations
  };

  struct BlockOutput {
    ad::Tensor scalars;   // rectified, feeds the next block
    ad::Tensor vectors;   // gated tangent field (empty after the last block)
    ad::Tensor features;  // per-point output that is concatenated and pooled
  };

  BlockOutput run_block(const Block& block, const PreparedPatch& patch,
                         const ad::Tensor& scalars,
                                              const ad::Tensor& vectors) const;

  EncoderConfig config_;
  std::vector<Block> blocks_;
  Linear output_;
};

struct HeadConfig {
  int hidden = 512;
  bool operator==(const HeadConfig&) const = default;
};

/// SimSiam projector (in -> h -> h) and predictor (h -> h/4 -> h). Hidden and
/// output normalizations subtract the batch mean of each channel before a
/// per-row layer norm, so both maps need batches of at least two rows.
class SimSiamHead {
public:
  SimSiamHead(int input_dim, const HeadConfig& config, std::uint64_t seed);

  const HeadConfig& config() const { return config_; }
  int input_dim() const { return input_dim_; }

  ad::Tensor project(const ad::Tensor& x) const;
  ad::Tensor predict(const ad::Tensor& z) const;

  std::vector<NamedParameter> parameters() const;

private:
  HeadConfig config_;
  int input_dim_;
  Linear proj1_;
  LayerNormParams proj_norm1_;
  Linear proj2_;
  LayerNormParams proj_norm2_;
  Linear pred1_;
  LayerNormParams pred_norm1_;
  Linear pred2_;
};

/// -mean_i cos(p_i, z_i) over the rows of the batch.
ad::Tensor negative_cosine(const ad::Tensor& p, const ad::Tensor& z);

struct SimSiamOutput {
  ad::Tensor loss;
  ad::Tensor z1, z2, p1, p2;
};

/// 0.5 D(p1, sg(z2)) + 0.5 D(p2, sg(z1)). With stop_grad = false the
/// targets stay in the graph (collapse ablation).
SimSiamOutput simsiam_loss(const ad::Tensor& x1, const ad::Tensor& x2, const SimSiamHead& head,
                           bool stop_grad = true);

}  // namespace ndesc
