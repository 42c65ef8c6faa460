#include "ndesc/network.hpp"

#include <algorithm>
#include <numeric>

#include "ndesc/errors.hpp"

namespace ndesc {

using ad::Tensor;

namespace {

// Parameters live at 32-bit storage precision so checkpoints are exact.
ad::Matrix storage_round(ad::Matrix m) {
  for (Eigen::Index i = 0; i < m.size(); ++i)
    m.data()[i] = static_cast<double>(static_cast<float>(m.data()[i]));
  return m;
}

}  // namespace

Linear Linear::make(Eigen::Index in, Eigen::Index out, double init_std, Rng& rng, bool with_bias) {
  ad::Matrix w(in, out);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.normal(0.0, init_std);
  Linear layer;
  layer.weight = Tensor::parameter(storage_round(std::move(w)));
  if (with_bias) layer.bias = Tensor::parameter(ad::Matrix::Zero(1, out));
  return layer;
}

Tensor Linear::operator()(const Tensor& x) const {
  Tensor y = ad::matmul(x, weight);
  return bias ? ad::add_row(y, bias) : y;
}

LayerNormParams LayerNormParams::make(Eigen::Index width) {
  return {Tensor::parameter(ad::Matrix::Ones(1, width)),
          Tensor::parameter(ad::Matrix::Zero(1, width))};
}

Tensor LayerNormParams::operator()(const Tensor& x) const { return ad::layer_norm(x, gamma, beta); }

PreparedPatch prepare_patch(const PatchCloud& patch, int operator_k, bool align) {
  const auto n = static_cast<Eigen::Index>(patch.size());
  if (patch.size() < kMinPatchPoints)
    throw ConfigError("encoder needs at least " + std::to_string(kMinPatchPoints) +
                      " points, got " + std::to_string(patch.size()));
  if (!patch.points.allFinite()) throw ConfigError("patch has non-finite coordinates");

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  const Points& p = patch.points;
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    for (int c = 0; c < 3; ++c)
      if (p(a, c) != p(b, c)) return p(a, c) < p(b, c);
    return false;
  });
  PatchCloud sorted;
  sorted.points.resize(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) sorted.points.row(i) = p.row(order[static_cast<std::size_t>(i)]);
  sorted.domain_radius = patch.domain_radius;
  if (align) sorted = canonical_align(sorted).patch;

  const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(operator_k), patch.size() - 1);
  const OperatorSet ops = build_operators(sorted.points, k);
  PreparedPatch out;
  out.gradient = std::make_shared<const ad::RowSparse>(ops.gradient);
  out.divergence = std::make_shared<const ad::RowSparse>(ops.divergence);
  out.curl = std::make_shared<const ad::RowSparse>(ops.curl);
  out.features.resize(n, 2);
  out.features.col(0).setOnes();
  out.features.col(1) = sorted.points.col(2);
  return out;
}

Encoder::Encoder(const EncoderConfig& config, std::uint64_t seed) : config_(config) {
  for (int w : config.widths)
    if (w < 1) throw ConfigError("encoder block widths must be positive");
  if (config.out_dim < 1) throw ConfigError("encoder output dimension must be positive");
  if (config.operator_k < 6) throw ConfigError("operator neighbourhood must be at least 6");

  Rng rng(derive_seed(seed, 0xE0C0DE));
  int scalar_in = 2;
  int vector_in = 0;
  for (std::size_t b = 0; b < config.widths.size(); ++b) {
    Block block;
    block.scalar_in = scalar_in;
    block.vector_in = vector_in;
    block.width = config.widths[b];
    const int feat = 2 * scalar_in + 2 * vector_in;
    block.mlp1 = Linear::make(feat, block.width, std::sqrt(2.0 / feat), rng);
    block.norm1 = LayerNormParams::make(block.width);
    block.mlp2 = Linear::make(block.width, block.width, std::sqrt(2.0 / block.width), rng);
    block.norm2 = LayerNormParams::make(block.width);
    if (b + 1 < config.widths.size()) {
      const int vin = scalar_in + vector_in;
      block.vector_map = Linear::make(vin, block.width, std::sqrt(1.0 / vin), rng, false);
    }
    blocks_.push_back(std::move(block));
    scalar_in = config.widths[b];
    vector_in = config.widths[b];
  }
  const int pooled = 2 * config.point_width();
  output_ = Linear::make(pooled, config.out_dim, std::sqrt(1.0 / pooled), rng);
}

Encoder::BlockOutput Encoder::run_block(const Block& block, const PreparedPatch& patch,
                                             const Tensor& scalars, const Tensor& vectors) const {
  const Tensor grad = ad::sparse_apply(patch.gradient, scalars);
  std::vector<Tensor> parts{scalars, ad::vec_norm(grad)};
  if (block.vector_in > 0) {
    parts.push_back(ad::sparse_apply(patch.divergence, vectors));
    parts.push_back(ad::sparse_apply(patch.curl, vectors));
  }
  const Tensor hidden = ad::relu(block.norm1(block.mlp1(ad::concat_cols(parts))));
  const Tensor pre = block.norm2(block.mlp2(hidden));
  const Tensor out_scalars = ad::relu(pre);
  if (!block.vector_map.weight) return {out_scalars, Tensor(), out_scalars};

  Tensor vin = grad;
  if (block.vector_in > 0) {
    const std::array<Tensor, 2> both{grad, vectors};
    vin = ad::concat_cols(both);
  }
  const Tensor out_vectors = ad::vec_gate(block.vector_map(vin), ad::sigmoid(pre));
  return {out_scalars, out_vectors, out_scalars};
}

Tensor Encoder::point_features(const PreparedPatch& patch) const {
  Tensor scalars = Tensor::constant(patch.features);
  Tensor vectors;
  std::vector<Tensor> outputs;
  for (const Block& block : blocks_) {
    auto [s, v, f] = run_block(block, patch, scalars, vectors);
    outputs.push_back(f);
    scalars = s;
    vectors = v;
  }
  return ad::concat_cols(outputs);
}

Tensor Encoder::pooled(const PreparedPatch& patch) const {
  const Tensor feats = point_features(patch);
  const std::array<Tensor, 2> pools{ad::mean_rows(feats), ad::max_rows(feats)};
  return ad::concat_cols(pools);
}

Tensor Encoder::project(const Tensor& pooled_rows) const { return output_(pooled_rows); }

void Encoder::center_output(const std::vector<PreparedPatch>& patches) {
  if (patches.empty()) throw ConfigError("center_output needs at least one patch");
  ad::NoGradGuard guard;
  ad::Matrix mean = ad::Matrix::Zero(1, output_.weight.value().rows());
  for (const auto& p : patches) mean += pooled(p).value();
  mean /= static_cast<double>(patches.size());
  output_.bias.mutable_value() = storage_round(-mean * output_.weight.value());
}

Tensor Encoder::forward(const PreparedPatch& patch) const { return project(pooled(patch)); }

Eigen::VectorXd Encoder::encode(const PatchCloud& patch, bool align) const {
  ad::NoGradGuard guard;
  const PreparedPatch prepared = prepare_patch(patch, config_.operator_k, align);
  return forward(prepared).value().row(0).transpose();
}

Eigen::MatrixXd Encoder::encode_all(const std::vector<PatchCloud>& patches, bool align) const {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(patches.size()), config_.out_dim);
  for (std::size_t i = 0; i < patches.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = encode(patches[i], align).transpose();
  return out;
}

std::vector<NamedParameter> Encoder::parameters() const {
  std::vector<NamedParameter> params;
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const Block& block = blocks_[b];
    const std::string prefix = "encoder.block" + std::to_string(b) + ".";
    params.emplace_back(prefix + "mlp1.weight", block.mlp1.weight);
    params.emplace_back(prefix + "mlp1.bias", block.mlp1.bias);
    params.emplace_back(prefix + "norm1.gamma", block.norm1.gamma);
    params.emplace_back(prefix + "norm1.beta", block.norm1.beta);
    params.emplace_back(prefix + "mlp2.weight", block.mlp2.weight);
    params.emplace_back(prefix + "mlp2.bias", block.mlp2.bias);
    params.emplace_back(prefix + "norm2.gamma", block.norm2.gamma);
    params.emplace_back(prefix + "norm2.beta", block.norm2.beta);
    if (block.vector_map.weight) params.emplace_back(prefix + "vector_map.weight", block.vector_map.weight);
  }
  params.emplace_back("encoder.output.weight", output_.weight);
  params.emplace_back("encoder.output.bias", output_.bias);
  return params;
}

// ---------------------------------------------------------------------------

SimSiamHead::SimSiamHead(int input_dim, const HeadConfig& config, std::uint64_t seed)
    : config_(config), input_dim_(input_dim) {
  const int h = config.hidden;
  if (h < 4 || input_dim < 1) throw ConfigError("head widths must be positive (hidden >= 4)");
  Rng rng(derive_seed(seed, 0x4EAD));
  proj1_ = Linear::make(input_dim, h, std::sqrt(2.0 / input_dim), rng);
  proj_norm1_ = LayerNormParams::make(h);
  proj2_ = Linear::make(h, h, std::sqrt(1.0 / h), rng);
  proj_norm2_ = LayerNormParams::make(h);
  pred1_ = Linear::make(h, h / 4, std::sqrt(2.0 / h), rng);
  pred_norm1_ = LayerNormParams::make(h / 4);
  pred2_ = Linear::make(h / 4, h, std::sqrt(1.0 / (h / 4)), rng);
}

namespace {

// Subtracts the batch mean of every column. A batch of identical rows maps to
// zero, so the trivial constant solution no longer minimizes the loss.
Tensor batch_center(const Tensor& x) { return ad::add_row(x, ad::scale(ad::mean_rows(x), -1.0)); }

}  // namespace

Tensor SimSiamHead::project(const Tensor& x) const {
  const Tensor h = ad::relu(proj_norm1_(batch_center(proj1_(x))));
  return proj_norm2_(batch_center(proj2_(h)));
}

Tensor SimSiamHead::predict(const Tensor& z) const {
  return pred2_(ad::relu(pred_norm1_(batch_center(pred1_(z)))));
}

std::vector<NamedParameter> SimSiamHead::parameters() const {
  return {{"head.proj1.weight", proj1_.weight},       {"head.proj1.bias", proj1_.bias},
          {"head.proj_norm1.gamma", proj_norm1_.gamma}, {"head.proj_norm1.beta", proj_norm1_.beta},
          {"head.proj2.weight", proj2_.weight},       {"head.proj2.bias", proj2_.bias},
          {"head.proj_norm2.gamma", proj_norm2_.gamma}, {"head.proj_norm2.beta", proj_norm2_.beta},
          {"head.pred1.weight", pred1_.weight},       {"head.pred1.bias", pred1_.bias},
          {"head.pred_norm1.gamma", pred_norm1_.gamma}, {"head.pred_norm1.beta", pred_norm1_.beta},
          {"head.pred2.weight", pred2_.weight},       {"head.pred2.bias", pred2_.bias}};
}

Tensor negative_cosine(const Tensor& p, const Tensor& z) {
  if (p.shape() != z.shape())
    throw ShapeError("negative_cosine: batch shapes differ");
  const Tensor cos = ad::sum_cols(ad::mul(ad::l2_normalize_rows(p), ad::l2_normalize_rows(z)));
  return ad::scale(ad::mean_all(cos), -1.0);
}

SimSiamOutput simsiam_loss(const Tensor& x1, const Tensor& x2, const SimSiamHead& head,
                           bool stop_grad) {
  if (x1.shape() != x2.shape()) throw ShapeError("simsiam_loss: view batches differ in shape");
  SimSiamOutput out;
  out.z1 = head.project(x1);
  out.z2 = head.project(x2);
  out.p1 = head.predict(out.z1);
  out.p2 = head.predict(out.z2);
  const Tensor t1 = stop_grad ? ad::stop_gradient(out.z1) : out.z1;
  const Tensor t2 = stop_grad ? ad::stop_gradient(out.z2) : out.z2;
  out.loss = ad::add(ad::scale(negative_cosine(out.p1, t2), 0.5),
                     ad::scale(negative_cosine(out.p2, t1), 0.5));
  return out;
}

}  // namespace ndesc
