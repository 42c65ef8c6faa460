#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ndesc/network.hpp"
#include "ndesc/patchgen.hpp"

namespace ndesc {

enum class OptimizerKind { Sgd, Adam };

const char* optimizer_name(OptimizerKind kind);
OptimizerKind parse_optimizer(const std::string& name);

struct TrainConfig {
  std::size_t batch_pairs = 256;
  int epochs = 1;
  double learning_rate = 0.0;  // <= 0: 0.05 * batch / 256 (sgd) or 1e-3 (adam)
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::Sgd;
  bool stop_gradient = true;
  std::size_t validation_pairs = 0;   // held out from the end of the dataset
  std::size_t validation_batch = 64;
  std::optional<std::size_t> max_steps;  // stop early (ablations)
  unsigned threads = 1;                  // patch preparation workers
  /// Pairs used to center the encoder output before the first step (0: off).
  std::size_t centering_pairs = 128;

  void validate() const;
  double resolved_learning_rate() const;
};

/// Encoder plus SimSiam head.
struct Model {
  Encoder encoder;
  SimSiamHead head;

  Model(const EncoderConfig& encoder_config, const HeadConfig& head_config, std::uint64_t seed);

  std::vector<NamedParameter> parameters() const;
};

/// SGD with momentum and L2 weight decay, or Adam.
/// Parameters and slots are rounded to 32-bit precision after every step.
struct OptimizerState {
  OptimizerKind kind = OptimizerKind::Sgd;
  std::uint64_t step = 0;
  std::vector<ad::Matrix> first;   // momentum / Adam first moment
  std::vector<ad::Matrix> second;  // Adam second moment (empty for SGD)
};

struct EpochLog {
  int epoch = 0;
  double loss = 0.0;
  double val_acc = 0.0;  // NaN when no validation pairs
};

struct TrainState {
  OptimizerState optimizer;
  int epochs_done = 0;
  std::vector<EpochLog> log;
};

struct TrainHooks {
  /// Called after each optimizer step with (global step, batch loss).
  std::function<void(std::uint64_t, double)> on_step;
  /// Called after each epoch; receives model and state for checkpointing.
  std::function<void(const Model&, const TrainState&)> on_epoch;
};

/// Trains `model` in place on `dataset`, continuing from `state` (epoch count
/// and optimizer slots). Each patch is canonically aligned before encoding.
/// Throws NumericalError (naming the 1-based epoch and batch) on a non-finite loss.
TrainState train(const Dataset& dataset, Model& model, const TrainConfig& config,
                 TrainState state = {}, const TrainHooks& hooks = {});

/// Mean SimSiam loss of the model over consecutive batches (no updates).
double evaluate_loss(std::span<const PatchPair> pairs, const Model& model, std::size_t batch_pairs,
                     bool stop_gradient = true);

/// Fraction of rows i whose most cosine-similar row of `targets` is i
/// (ties resolve to the lower index).
double matching_accuracy(const Eigen::MatrixXd& sources, const Eigen::MatrixXd& targets);

/// Matching accuracy averaged over consecutive batches of `batch` pairs
/// (a trailing batch smaller than 2 is dropped).
double validate_matching(std::span<const PatchPair> pairs, const Encoder& encoder, std::size_t batch);

/// Mean cosine similarity over distinct row pairs (collapse detector).
double mean_pairwise_cosine(const Eigen::MatrixXd& descriptors);

// ---------------------------------------------------------------------------
// Checkpoints: 8-byte magic "NDESCCKP", u64 LE header length, JSON header,
// then a little-endian f32 blob. The blob holds every parameter in
// Model::parameters() order (row-major), followed by the optimizer's first
// slots and then its second slots in the same order.

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  EncoderConfig encoder;
  HeadConfig head;
  std::uint64_t seed = 0;
  TrainState state;
};

void save_checkpoint(const std::filesystem::path& path, const Model& model, const TrainState& state,
                     std::uint64_t seed);

/// Reads the header and builds a model of the stored shape with the stored
/// weights.
std::pair<Model, Checkpoint> load_checkpoint(const std::filesystem::path& path);

/// Loads weights into an existing model; throws IoError listing expected vs
/// found shapes on mismatch.
Checkpoint load_checkpoint_into(const std::filesystem::path& path, Model& model);

}  // namespace ndesc
