#include "ndesc/trainer.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>

#include <json.hpp>

#include "ndesc/binary_io.hpp"
#include "ndesc/errors.hpp"
#include "ndesc/parallel.hpp"

namespace ndesc {

using ad::Tensor;

const char* optimizer_name(OptimizerKind kind) {
  return kind == OptimizerKind::Adam ? "adam" : "sgd";
}

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "sgd") return OptimizerKind::Sgd;
  if (name == "adam") return OptimizerKind::Adam;
  throw ConfigError("unknown optimizer '" + name + "' (expected sgd or adam)");
}

void TrainConfig::validate() const {
  if (batch_pairs < 2) throw ConfigError("batch_pairs must be at least 2 (validation needs distractors)");
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (validation_pairs > 0 && validation_batch < 2) throw ConfigError("validation batch must be at least 2");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be non-negative");
  if (threads < 1) throw ConfigError("threads must be at least 1");
}

double TrainConfig::resolved_learning_rate() const {
  if (learning_rate > 0.0) return learning_rate;
  return optimizer == OptimizerKind::Adam ? 1e-3 : 0.05 * static_cast<double>(batch_pairs) / 256.0;
}

Model::Model(const EncoderConfig& encoder_config, const HeadConfig& head_config, std::uint64_t seed)
    : encoder(encoder_config, seed), head(encoder_config.out_dim, head_config, seed) {}

std::vector<NamedParameter> Model::parameters() const {
  auto params = encoder.parameters();
  for (auto& p : head.parameters()) params.push_back(std::move(p));
  return params;
}

namespace {

void storage_round(ad::Matrix& m) {
  for (Eigen::Index i = 0; i < m.size(); ++i)
    m.data()[i] = static_cast<double>(static_cast<float>(m.data()[i]));
}

void init_slots(OptimizerState& opt, const std::vector<NamedParameter>& params, OptimizerKind kind) {
  if (!opt.first.empty()) {
    if (opt.first.size() != params.size()) throw ConfigError("optimizer state does not match model");
    return;
  }
  opt.kind = kind;
  for (const auto& [name, t] : params) {
    opt.first.push_back(ad::Matrix::Zero(t.rows(), t.cols()));
    if (kind == OptimizerKind::Adam) opt.second.push_back(ad::Matrix::Zero(t.rows(), t.cols()));
  }
}

void optimizer_step(OptimizerState& opt, const std::vector<NamedParameter>& params,
                    const TrainConfig& config, double lr) {
  ++opt.step;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor param = params[i].second;
    if (param.grad().size() == 0) continue;
    ad::Matrix& w = param.mutable_value();
    const ad::Matrix g = param.grad() + config.weight_decay * w;
    if (opt.kind == OptimizerKind::Sgd) {
      opt.first[i] = config.momentum * opt.first[i] + g;
      w -= lr * opt.first[i];
    } else {
      constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
      opt.first[i] = b1 * opt.first[i] + (1.0 - b1) * g;
      opt.second[i] = b2 * opt.second[i] + (1.0 - b2) * g.cwiseProduct(g);
      const double c1 = 1.0 - std::pow(b1, static_cast<double>(opt.step));
      const double c2 = 1.0 - std::pow(b2, static_cast<double>(opt.step));
      w.array() -= lr * (opt.first[i].array() / c1) /
                   ((opt.second[i].array() / c2).sqrt() + eps);
      storage_round(opt.second[i]);
    }
    storage_round(opt.first[i]);
    storage_round(w);
  }
}

// Prepares 2 * pairs.size() patches ([a0, b0, a1, b1, ...]) with a fixed
// assignment of work to threads, so the result is independent of timing.
std::vector<PreparedPatch> prepare_pairs(std::span<const PatchPair* const> pairs, int operator_k,
                                         unsigned threads) {
  std::vector<PreparedPatch> out(2 * pairs.size());
  parallel_for(out.size(), threads, [&](std::size_t i) {
    const PatchPair& pair = *pairs[i / 2];
    out[i] = prepare_patch(i % 2 == 0 ? pair.a : pair.b, operator_k, true);
  });
  return out;
}

SimSiamOutput batch_loss(const std::vector<PreparedPatch>& prepared, const Model& model,
                         bool stop_gradient) {
  std::vector<Tensor> rows_a;
  std::vector<Tensor> rows_b;
  for (std::size_t i = 0; i < prepared.size(); i += 2) {
    rows_a.push_back(model.encoder.pooled(prepared[i]));
    rows_b.push_back(model.encoder.pooled(prepared[i + 1]));
  }
  const Tensor x1 = model.encoder.project(ad::concat_rows(rows_a));
  const Tensor x2 = model.encoder.project(ad::concat_rows(rows_b));
  return simsiam_loss(x1, x2, model.head, stop_gradient);
}

}  // namespace

TrainState train(const Dataset& dataset, Model& model, const TrainConfig& config, TrainState state,
                 const TrainHooks& hooks) {
  config.validate();
  if (dataset.pairs.size() <= config.validation_pairs)
    throw ConfigError("dataset too small for the requested validation split");
  const std::size_t n_train = dataset.pairs.size() - config.validation_pairs;
  if (n_train < config.batch_pairs)
    throw ConfigError("dataset has " + std::to_string(n_train) + " training pairs, fewer than batch_pairs=" +
                      std::to_string(config.batch_pairs));
  const std::span<const PatchPair> validation(dataset.pairs.data() + n_train, config.validation_pairs);

  const auto params = model.parameters();
  init_slots(state.optimizer, params, config.optimizer);
  const std::size_t steps_per_epoch = n_train / config.batch_pairs;
  std::uint64_t total_steps = steps_per_epoch * static_cast<std::uint64_t>(config.epochs);
  if (config.max_steps) total_steps = std::min<std::uint64_t>(total_steps, *config.max_steps);
  const double lr0 = config.resolved_learning_rate();

  if (state.optimizer.step == 0 && state.epochs_done == 0 && config.centering_pairs > 0) {
    std::vector<const PatchPair*> sample;
    for (std::size_t i = 0; i < std::min(config.centering_pairs, n_train); ++i) sample.push_back(&dataset.pairs[i]);
    model.encoder.center_output(prepare_pairs(sample, model.encoder.config().operator_k, config.threads));
  }

  for (int epoch = state.epochs_done; epoch < config.epochs; ++epoch) {
    if (state.optimizer.step >= total_steps) break;
    std::vector<std::size_t> order(n_train);
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(derive_seed(config.seed, 0x5A0000 + static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order.begin(), order.end());

    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < steps_per_epoch && state.optimizer.step < total_steps; ++b) {
      std::vector<const PatchPair*> batch;
      for (std::size_t i = 0; i < config.batch_pairs; ++i)
        batch.push_back(&dataset.pairs[order[b * config.batch_pairs + i]]);
      const auto prepared = prepare_pairs(batch, model.encoder.config().operator_k, config.threads);

      for (const auto& [name, t] : params) ad::Tensor(t).zero_grad();
      double loss_value = std::numeric_limits<double>::quiet_NaN();
      try {
        const SimSiamOutput out = batch_loss(prepared, model, config.stop_gradient);
        loss_value = out.loss.item();
        if (!std::isfinite(loss_value)) throw NumericalError("non-finite loss");
        ad::backward(out.loss);
      } catch (const NumericalError& e) {
        throw NumericalError("epoch " + std::to_string(epoch + 1) + ", batch " + std::to_string(b + 1) +
                             ": " + e.what());
      }
      const double progress =
          static_cast<double>(state.optimizer.step) / static_cast<double>(std::max<std::uint64_t>(total_steps, 1));
      const double lr = lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
      optimizer_step(state.optimizer, params, config, lr);
      loss_sum += loss_value;
      ++batches;
      if (hooks.on_step) hooks.on_step(state.optimizer.step, loss_value);
    }

    EpochLog entry;
    entry.epoch = epoch + 1;
    entry.loss = batches ? loss_sum / static_cast<double>(batches) : std::numeric_limits<double>::quiet_NaN();
    entry.val_acc = validation.size() >= 2
                        ? validate_matching(validation, model.encoder, config.validation_batch)
                        : std::numeric_limits<double>::quiet_NaN();
    state.log.push_back(entry);
    state.epochs_done = epoch + 1;
    if (hooks.on_epoch) hooks.on_epoch(model, state);
  }
  for (const auto& [name, t] : params) ad::Tensor(t).zero_grad();
  return state;
}

double evaluate_loss(std::span<const PatchPair> pairs, const Model& model, std::size_t batch_pairs,
                     bool stop_gradient) {
  if (batch_pairs < 2) throw ConfigError("batch must be at least 2");
  ad::NoGradGuard guard;
  double sum = 0.0;
  std::size_t batches = 0;
  for (std::size_t start = 0; start + batch_pairs <= pairs.size(); start += batch_pairs) {
    std::vector<const PatchPair*> batch;
    for (std::size_t i = 0; i < batch_pairs; ++i) batch.push_back(&pairs[start + i]);
    const auto prepared = prepare_pairs(batch, model.encoder.config().operator_k, 1);
    sum += batch_loss(prepared, model, stop_gradient).loss.item();
    ++batches;
  }
  if (batches == 0) throw ConfigError("not enough pairs for one batch");
  return sum / static_cast<double>(batches);
}

double matching_accuracy(const Eigen::MatrixXd& sources, const Eigen::MatrixXd& targets) {
  if (sources.rows() != targets.rows() || sources.cols() != targets.cols())
    throw ShapeError("matching_accuracy: source and target batches differ in shape");
  if (sources.rows() == 0) return 0.0;
  auto normalize = [](const Eigen::MatrixXd& m) {
    Eigen::VectorXd norms = m.rowwise().norm();
    for (Eigen::Index i = 0; i < norms.size(); ++i) norms[i] = norms[i] > 0.0 ? 1.0 / norms[i] : 0.0;
    return Eigen::MatrixXd(norms.asDiagonal() * m);
  };
  const Eigen::MatrixXd sim = normalize(sources) * normalize(targets).transpose();
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < sim.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < sim.cols(); ++j)
      if (sim(i, j) > sim(i, best)) best = j;
    if (best == i) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(sim.rows());
}

double validate_matching(std::span<const PatchPair> pairs, const Encoder& encoder, std::size_t batch) {
  if (batch < 2) throw ConfigError("validation batch must be at least 2");
  double correct = 0.0;
  std::size_t counted = 0;
  for (std::size_t start = 0; start < pairs.size(); start += batch) {
    const std::size_t size = std::min(batch, pairs.size() - start);
    if (size < 2) break;
    std::vector<PatchCloud> a;
    std::vector<PatchCloud> b;
    for (std::size_t i = 0; i < size; ++i) {
      a.push_back(pairs[start + i].a);
      b.push_back(pairs[start + i].b);
    }
    correct += matching_accuracy(encoder.encode_all(a), encoder.encode_all(b)) * static_cast<double>(size);
    counted += size;
  }
  return counted ? correct / static_cast<double>(counted) : 0.0;
}

double mean_pairwise_cosine(const Eigen::MatrixXd& descriptors) {
  const Eigen::Index n = descriptors.rows();
  if (n < 2) throw ConfigError("mean_pairwise_cosine needs at least two descriptors");
  Eigen::VectorXd inv = descriptors.rowwise().norm();
  for (Eigen::Index i = 0; i < n; ++i) inv[i] = inv[i] > 0.0 ? 1.0 / inv[i] : 0.0;
  const Eigen::MatrixXd unit = inv.asDiagonal() * descriptors;
  const Eigen::MatrixXd sim = unit * unit.transpose();
  const double off_diag = sim.sum() - sim.trace();
  return off_diag / static_cast<double>(n * (n - 1));
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'N', 'D', 'E', 'S', 'C', 'C', 'K', 'P'};

void append_matrix(std::vector<float>& blob, const ad::Matrix& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) blob.push_back(static_cast<float>(m(r, c)));
}

ad::Matrix take_matrix(const std::vector<float>& blob, std::size_t& at, Eigen::Index rows, Eigen::Index cols) {
  ad::Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = static_cast<double>(blob[at++]);
  return m;
}

struct RawCheckpoint {
  nlohmann::json header;
  std::vector<float> blob;
};

RawCheckpoint read_raw(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0)
    throw IoError(path.string() + ": not a checkpoint (bad magic)");
  std::uint64_t header_len = 0;
  for (int b = 0; b < 8; ++b) header_len |= static_cast<std::uint64_t>(bytes[8 + b]) << (8 * b);
  if (16 + header_len > bytes.size()) throw IoError(path.string() + ": truncated checkpoint header");
  RawCheckpoint raw;
  try {
    raw.header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": malformed checkpoint header: " + e.what());
  }
  const std::size_t blob_bytes = bytes.size() - 16 - header_len;
  if (blob_bytes % 4 != 0) throw IoError(path.string() + ": truncated checkpoint blob");
  raw.blob = decode_f32le(std::span(bytes).subspan(16 + header_len));
  return raw;
}

Checkpoint parse_header(const nlohmann::json& h, const std::filesystem::path& path) {
  Checkpoint ck;
  try {
    const int version = h.at("version").get<int>();
    if (version != kCheckpointVersion)
      throw IoError(path.string() + ": checkpoint version " + std::to_string(version) +
                    " unsupported (expected " + std::to_string(kCheckpointVersion) + ")");
    const auto widths = h.at("encoder").at("widths").get<std::vector<int>>();
    if (widths.size() != 4) throw IoError(path.string() + ": encoder needs four block widths");
    for (std::size_t i = 0; i < 4; ++i) ck.encoder.widths[i] = widths[i];
    ck.encoder.out_dim = h.at("encoder").at("out_dim").get<int>();
    ck.encoder.operator_k = h.at("encoder").at("operator_k").get<int>();
    ck.head.hidden = h.at("head").at("hidden").get<int>();
    ck.seed = h.at("seed").get<std::uint64_t>();
    const auto& opt = h.at("optimizer");
    ck.state.optimizer.kind = parse_optimizer(opt.at("kind").get<std::string>());
    ck.state.optimizer.step = opt.at("step").get<std::uint64_t>();
    ck.state.epochs_done = h.at("epochs_done").get<int>();
    for (const auto& e : h.at("log")) {
      EpochLog entry;
      entry.epoch = e.at("epoch").get<int>();
      entry.loss = e.at("loss").is_null() ? std::numeric_limits<double>::quiet_NaN() : e.at("loss").get<double>();
      entry.val_acc = e.at("val_acc").is_null() ? std::numeric_limits<double>::quiet_NaN()
                                                : e.at("val_acc").get<double>();
      ck.state.log.push_back(entry);
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": malformed checkpoint header: " + e.what());
  } catch (const ConfigError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  return ck;
}

void fill_model(const RawCheckpoint& raw, Model& model, Checkpoint& ck, const std::filesystem::path& path) {
  const auto params = model.parameters();
  const auto& tensors = raw.header.at("tensors");
  if (tensors.size() != params.size())
    throw IoError(path.string() + ": checkpoint holds " + std::to_string(tensors.size()) +
                  " tensors, model expects " + std::to_string(params.size()));
  std::size_t needed = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& t = tensors[i];
    const auto name = t.at("name").get<std::string>();
    const auto rows = t.at("rows").get<Eigen::Index>();
    const auto cols = t.at("cols").get<Eigen::Index>();
    const auto& [pname, param] = params[i];
    if (name != pname || rows != param.rows() || cols != param.cols())
      throw IoError(path.string() + ": tensor " + std::to_string(i) + " mismatch: expected " + pname +
                    " [" + std::to_string(param.rows()) + "x" + std::to_string(param.cols()) +
                    "], found " + name + " [" + std::to_string(rows) + "x" + std::to_string(cols) + "]");
    needed += static_cast<std::size_t>(rows * cols);
  }
  const int slot_sets = raw.header.at("optimizer").at("slots").get<int>();
  if (raw.blob.size() != needed * static_cast<std::size_t>(1 + slot_sets))
    throw IoError(path.string() + ": checkpoint blob truncated or oversized (" +
                  std::to_string(raw.blob.size()) + " floats, expected " +
                  std::to_string(needed * static_cast<std::size_t>(1 + slot_sets)) + ")");
  std::size_t at = 0;
  for (const auto& [name, param] : params) {
    ad::Tensor t = param;
    t.mutable_value() = take_matrix(raw.blob, at, param.rows(), param.cols());
    t.zero_grad();
  }
  ck.state.optimizer.first.clear();
  ck.state.optimizer.second.clear();
  for (int s = 0; s < slot_sets; ++s)
    for (const auto& [name, param] : params) {
      auto m = take_matrix(raw.blob, at, param.rows(), param.cols());
      (s == 0 ? ck.state.optimizer.first : ck.state.optimizer.second).push_back(std::move(m));
    }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Model& model, const TrainState& state,
                     std::uint64_t seed) {
  const auto params = model.parameters();
  nlohmann::json header;
  header["version"] = kCheckpointVersion;
  const auto& ec = model.encoder.config();
  header["encoder"] = {{"widths", ec.widths}, {"out_dim", ec.out_dim}, {"operator_k", ec.operator_k}};
  header["head"] = {{"hidden", model.head.config().hidden}};
  header["seed"] = seed;
  const int slots = state.optimizer.first.empty() ? 0 : (state.optimizer.second.empty() ? 1 : 2);
  header["optimizer"] = {{"kind", optimizer_name(state.optimizer.kind)},
                         {"step", state.optimizer.step},
                         {"slots", slots}};
  header["epochs_done"] = state.epochs_done;
  nlohmann::json log = nlohmann::json::array();
  for (const auto& e : state.log)
    log.push_back({{"epoch", e.epoch},
                   {"loss", std::isfinite(e.loss) ? nlohmann::json(e.loss) : nlohmann::json()},
                   {"val_acc", std::isfinite(e.val_acc) ? nlohmann::json(e.val_acc) : nlohmann::json()}});
  header["log"] = log;
  nlohmann::json tensors = nlohmann::json::array();
  std::vector<float> blob;
  for (const auto& [name, t] : params) {
    tensors.push_back({{"name", name}, {"rows", t.rows()}, {"cols", t.cols()}});
    append_matrix(blob, t.value());
  }
  header["tensors"] = tensors;
  if (slots >= 1)
    for (const auto& m : state.optimizer.first) append_matrix(blob, m);
  if (slots == 2)
    for (const auto& m : state.optimizer.second) append_matrix(blob, m);

  const std::string text = header.dump();
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(kMagic, 8);
    const auto len = static_cast<std::uint64_t>(text.size());
    for (int b = 0; b < 8; ++b) out.put(static_cast<char>((len >> (8 * b)) & 0xFF));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    write_f32le(out, blob);
    if (!out) throw IoError("failed writing " + tmp.string());
  }
  std::error_code err;
  std::filesystem::rename(tmp, path, err);
  if (err) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + err.message());
}

std::pair<Model, Checkpoint> load_checkpoint(const std::filesystem::path& path) {
  const RawCheckpoint raw = read_raw(path);
  Checkpoint ck = parse_header(raw.header, path);
  Model model(ck.encoder, ck.head, ck.seed);
  try {
    fill_model(raw, model, ck, path);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": malformed checkpoint header: " + e.what());
  }
  return {std::move(model), std::move(ck)};
}

Checkpoint load_checkpoint_into(const std::filesystem::path& path, Model& model) {
  const RawCheckpoint raw = read_raw(path);
  Checkpoint ck = parse_header(raw.header, path);
  if (!(ck.encoder == model.encoder.config()) || !(ck.head == model.head.config())) {
    const auto& e = model.encoder.config();
    throw IoError(path.string() + ": width config mismatch: expected widths (" +
                  std::to_string(e.widths[0]) + "," + std::to_string(e.widths[1]) + "," +
                  std::to_string(e.widths[2]) + "," + std::to_string(e.widths[3]) + ") out " +
                  std::to_string(e.out_dim) + " hidden " + std::to_string(model.head.config().hidden) +
                  ", found (" + std::to_string(ck.encoder.widths[0]) + "," +
                  std::to_string(ck.encoder.widths[1]) + "," + std::to_string(ck.encoder.widths[2]) +
                  "," + std::to_string(ck.encoder.widths[3]) + ") out " +
                  std::to_string(ck.encoder.out_dim) + " hidden " + std::to_string(ck.head.hidden));
  }
  try {
    fill_model(raw, model, ck, path);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": malformed checkpoint header: " + e.what());
  }
  return ck;
}

}  // namespace ndesc
