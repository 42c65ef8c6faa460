// ndesc: command-line entry points. Exit codes: 0 ok, 2 configuration,
// 3 I/O, 4 numerical.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ndesc/baselines.hpp"
#include "ndesc/correspond.hpp"
#include "ndesc/errors.hpp"
#include "ndesc/experiments.hpp"
#include "ndesc/trainer.hpp"

namespace fs = std::filesystem;
using namespace ndesc;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumerical = 4;

// Reads a flat "key = value" file into "--key=value" arguments. '#' and ';'
// start comments; underscores in keys are read as dashes.
std::vector<std::string> config_arguments(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  std::vector<std::string> args;
  std::string line;
  int line_no = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": empty key");
    for (char& c : key)
      if (c == '_') c = '-';
    args.push_back("--" + key + "=" + value);
  }
  return args;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << std::setprecision(9);
  return out;
}

void finish(std::ofstream& out, const fs::path& path) {
  out.flush();
  if (!out) throw IoError("failed writing " + path.string());
}

// Loads a trained encoder, or builds an untrained one from `seed`.
Model load_or_init(const std::optional<fs::path>& checkpoint, std::uint64_t seed) {
  if (checkpoint) return load_checkpoint(*checkpoint).first;
  std::cerr << "note: no checkpoint given, using an untrained encoder (seed " << seed << ")\n";
  return Model(EncoderConfig{}, HeadConfig{}, seed);
}

void write_log_csv(const fs::path& path, const TrainState& state) {
  auto out = open_out(path);
  out << "epoch,loss,val_acc\n";
  for (const auto& e : state.log) {
    out << e.epoch << ',' << e.loss << ',';
    if (std::isfinite(e.val_acc)) out << e.val_acc;
    out << '\n';
  }
  finish(out, path);
}

std::string epoch_name(int epoch) {
  std::ostringstream s;
  s << "epoch-" << std::setw(4) << std::setfill('0') << epoch << ".ckpt";
  return s.str();
}

// --- commands --------------------------------------------------------------

struct GenArgs {
  std::size_t pairs = 0;
  std::uint64_t seed = 0;
  fs::path out;
  unsigned threads = 1;
  GenerationConfig config;
};

int run_gen(const GenArgs& a) {
  if (a.pairs == 0) throw ConfigError("--pairs must be at least 1");
  const Dataset ds = generate_dataset(a.config, a.pairs, a.seed, a.threads);
  write_dataset(ds, a.out);
  std::cout << "wrote " << ds.pairs.size() << " pairs (seed " << a.seed << ") to " << a.out.string() << "\n";
  return 0;
}

struct TrainArgs {
  fs::path data;
  fs::path out;
  std::uint64_t seed = 0;
  TrainConfig config;
  std::string optimizer = "sgd";
  bool no_stop_gradient = false;
  std::size_t max_steps = 0;
  bool resume = false;
  int out_dim = 2048;
  std::size_t log_every = 0;
};

int run_train(TrainArgs a) {
  a.config.seed = a.seed;
  a.config.optimizer = parse_optimizer(a.optimizer);
  a.config.stop_gradient = !a.no_stop_gradient;
  if (a.max_steps > 0) a.config.max_steps = a.max_steps;
  a.config.validate();
  const Dataset ds = read_dataset(a.data);
  ensure_dir(a.out);
  const fs::path latest = a.out / "latest.ckpt";

  EncoderConfig ec;
  ec.out_dim = a.out_dim;
  Model model(ec, HeadConfig{}, a.seed);
  TrainState state;
  if (a.resume && fs::exists(latest)) {
    const Checkpoint ck = load_checkpoint_into(latest, model);
    if (ck.seed != a.seed)
      throw ConfigError("checkpoint was trained with seed " + std::to_string(ck.seed) + ", not " +
                        std::to_string(a.seed));
    state = ck.state;
    std::cout << "resuming after epoch " << state.epochs_done << "\n";
  }

  TrainHooks hooks;
  if (a.log_every > 0)
    hooks.on_step = [&](std::uint64_t step, double loss) {
      if (step % a.log_every == 0) std::cerr << "step " << step << " loss " << loss << std::endl;
    };
  hooks.on_epoch = [&](const Model& m, const TrainState& s) {
    save_checkpoint(a.out / epoch_name(s.epochs_done), m, s, a.seed);
    save_checkpoint(latest, m, s, a.seed);
    write_log_csv(a.out / "train_log.csv", s);
    const auto& e = s.log.back();
    std::cout << "epoch " << e.epoch << " loss " << e.loss << " val_acc " << e.val_acc << std::endl;
  };
  state = train(ds, model, a.config, state, hooks);
  write_log_csv(a.out / "train_log.csv", state);
  return 0;
}

struct ValidateArgs {
  std::optional<fs::path> checkpoint;
  fs::path data;
  std::size_t batch = 64;
  std::size_t last = 0;
  bool compare_untrained = false;
  std::uint64_t seed = 0;
};

int run_validate(const ValidateArgs& a) {
  if (a.batch < 2) throw ConfigError("--batch must be at least 2");
  const Dataset ds = read_dataset(a.data);
  std::span<const PatchPair> pairs(ds.pairs);
  if (a.last > 0) {
    if (a.last > pairs.size()) throw ConfigError("--last exceeds the dataset size");
    pairs = pairs.last(a.last);
  }
  const Model model = load_or_init(a.checkpoint, a.seed);
  std::cout << "accuracy " << validate_matching(pairs, model.encoder, a.batch) << " (batch " << a.batch << ", "
            << pairs.size() << " pairs)\n";
  if (a.compare_untrained) {
    const Model fresh(model.encoder.config(), model.head.config(), a.seed);
    std::cout << "untrained accuracy " << validate_matching(pairs, fresh.encoder, a.batch) << "\n";
  }
  return 0;
}

struct ClusterArgs {
  std::optional<fs::path> checkpoint;
  fs::path out;
  unsigned threads = 1;
  ClusterConfig config;
};

int run_cluster(const ClusterArgs& a) {
  const Model model = load_or_init(a.checkpoint, a.config.seed);
  ensure_dir(a.out);
  const ClusterResult r = run_cluster_eval(model.encoder, a.config, a.threads);
  const fs::path emb = a.out / "cluster_embedding.csv";
  auto out = open_out(emb);
  out << "method,pc1,pc2,label\n";
  for (const auto& m : r.methods)
    for (Eigen::Index i = 0; i < m.pca.coords.rows(); ++i)
      out << m.method << ',' << m.pca.coords(i, 0) << ',' << m.pca.coords(i, 1) << ','
          << quadric_name(static_cast<QuadricKind>(r.labels[static_cast<std::size_t>(i)])) << '\n';
  finish(out, emb);
  const fs::path sil = a.out / "cluster_silhouette.csv";
  auto s = open_out(sil);
  s << "method,silhouette\n";
  for (const auto& m : r.methods) {
    s << m.method << ',' << m.silhouette << '\n';
    std::cout << "silhouette " << m.method << " " << m.silhouette << "\n";
  }
  s << "raw_z," << r.raw_z_silhouette << '\n';
  std::cout << "silhouette raw_z " << r.raw_z_silhouette << "\n";
  finish(s, sil);
  return 0;
}

struct TransitionArgs {
  std::optional<fs::path> checkpoint;
  fs::path out;
  unsigned threads = 1;
  TransitionConfig config;
};

int run_transition(const TransitionArgs& a) {
  const Model model = load_or_init(a.checkpoint, a.config.seed);
  ensure_dir(a.out);
  const TransitionResult r = run_transition_eval(model.encoder, a.config, a.threads);
  const fs::path path = a.out / "transition_path.csv";
  auto out = open_out(path);
  out << "method,t,pc1,pc2\n";
  for (const auto& m : r.methods)
    for (std::size_t i = 0; i < r.t.size(); ++i)
      out << m.embedding.method << ',' << r.t[i] << ',' << m.embedding.pca.coords(static_cast<Eigen::Index>(i), 0)
          << ',' << m.embedding.pca.coords(static_cast<Eigen::Index>(i), 1) << '\n';
  finish(out, path);
  const fs::path sim = a.out / "transition_similarity.csv";
  auto s = open_out(sim);
  s << "method,consecutive_cosine,random_pair_cosine,gap\n";
  for (const auto& m : r.methods) {
    const double gap = m.consecutive_cosine - m.random_pair_cosine;
    s << m.embedding.method << ',' << m.consecutive_cosine << ',' << m.random_pair_cosine << ',' << gap << '\n';
    std::cout << m.embedding.method << " consecutive " << m.consecutive_cosine << " random " << m.random_pair_cosine
              << " gap " << gap << "\n";
  }
  finish(s, sim);
  return 0;
}

struct MatchArgs {
  std::optional<fs::path> checkpoint;
  fs::path mesh_a;
  fs::path mesh_b;
  std::optional<fs::path> gt;
  fs::path out;
  std::size_t k = 64;
  bool use_zoomout = false;
  std::size_t k0 = 10;
  std::size_t step = 5;
  std::size_t k_max = 0;
  std::string metric = "cosine";
  unsigned threads = 1;
  std::uint64_t seed = 0;
};

void report_curve(const ErrorCurve& curve, const fs::path& path, const char* label) {
  write_error_curve_csv(path, curve);
  std::cout << label << " mean geodesic error x100 " << 100.0 * curve.mean_error << "\n";
}

int run_match(const MatchArgs& a) {
  if (a.metric != "cosine" && a.metric != "euclidean") throw ConfigError("--metric must be cosine or euclidean");
  const TriMesh mesh_a = read_mesh(a.mesh_a);
  const TriMesh mesh_b = read_mesh(a.mesh_b);
  std::optional<PointMap> gt;
  if (a.gt) {
    gt = read_pointmap(*a.gt, mesh_b.vertex_count());
    if (gt->size() != mesh_a.vertex_count())
      throw IoError(a.gt->string() + ": ground truth has " + std::to_string(gt->size()) + " entries, mesh A has " +
                    std::to_string(mesh_a.vertex_count()) + " vertices");
  }
  const Model model = load_or_init(a.checkpoint, a.seed);
  ensure_dir(a.out);
  const Eigen::MatrixXd da = dense_descriptors(mesh_a.vertices, model.encoder, a.k, a.threads);
  const Eigen::MatrixXd db = dense_descriptors(mesh_b.vertices, model.encoder, a.k, a.threads);
  PointMap map = nn_match(da, db, a.metric == "cosine" ? MatchMetric::Cosine : MatchMetric::Euclidean);
  if (gt) report_curve(geodesic_error_curve(map, *gt, mesh_b), a.out / "error_curve_initial.csv", "initial");
  if (a.use_zoomout) {
    ZoomOutParams zp;
    zp.k0 = a.k0;
    zp.step = a.step;
    const std::size_t k_max =
        a.k_max > 0 ? a.k_max : std::min<std::size_t>(100, std::min(mesh_a.vertex_count(), mesh_b.vertex_count()) - 2);
    zp.k_max = k_max;
    map = zoomout(mesh_basis(mesh_a, k_max), mesh_basis(mesh_b, k_max), map, zp);
  }
  write_pointmap(a.out / "map.txt", map);
  if (gt) report_curve(geodesic_error_curve(map, *gt, mesh_b), a.out / "error_curve.csv", "final");
  std::cout << "wrote " << (a.out / "map.txt").string() << "\n";
  return 0;
}

struct CurveArgs {
  fs::path map;
  fs::path gt;
  fs::path mesh_b;
  fs::path out;
};

int run_curve(const CurveArgs& a) {
  const TriMesh mesh_b = read_mesh(a.mesh_b);
  const PointMap map = read_pointmap(a.map, mesh_b.vertex_count());
  const PointMap gt = read_pointmap(a.gt, mesh_b.vertex_count());
  ensure_dir(a.out);
  report_curve(geodesic_error_curve(map, gt, mesh_b), a.out / "error_curve.csv", "map");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  // Expand --config FILE into leading arguments so explicit flags win.
  std::vector<std::string> args(argv, argv + argc);
  try {
    for (std::size_t i = 1; i < args.size(); ++i) {
      std::optional<std::string> file;
      if (args[i] == "--config" && i + 1 < args.size()) {
        file = args[i + 1];
        args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i) + 2);
      } else if (args[i].rfind("--config=", 0) == 0) {
        file = args[i].substr(9);
        args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
      }
      if (file) {
        const auto extra = config_arguments(*file);
        const std::size_t at = args.size() > 1 ? 2 : 1;  // after the subcommand name
        args.insert(args.begin() + static_cast<std::ptrdiff_t>(std::min(at, args.size())), extra.begin(), extra.end());
        break;
      }
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kExitIo;
  }

  CLI::App app{"Sampling-invariant local surface descriptors"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "ndesc 1.0");
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  std::string config_note;
  app.add_option("--config", config_note, "flat key = value file (explicit flags override it)");

  std::function<int()> action;

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "generate a synthetic patch-pair dataset");
  g->add_option("--pairs", gen.pairs, "number of pairs")->required();
  g->add_option("--seed", gen.seed, "global seed")->required();
  g->add_option("--out", gen.out, "output dataset directory")->required();
  g->add_option("--threads", gen.threads, "worker threads")->check(CLI::PositiveNumber);
  g->add_option("--degree-min", gen.config.degree_min, "minimum polynomial degree");
  g->add_option("--degree-max", gen.config.degree_max, "maximum polynomial degree");
  g->add_option("--coeff-scale", gen.config.coeff_scale, "coefficient range [-s, s]");
  g->add_option("--n-min", gen.config.n_min, "minimum points per patch");
  g->add_option("--n-max", gen.config.n_max, "maximum points per patch");
  g->add_option("--radius", gen.config.domain_radius, "sampling disk radius");
  g->callback([&] { action = [&] { return run_gen(gen); }; });

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train encoder and head with the SimSiam objective");
  t->add_option("--data", tr.data, "dataset directory")->required();
  t->add_option("--out", tr.out, "output directory for checkpoints and train_log.csv")->required();
  t->add_option("--seed", tr.seed, "initialization and shuffling seed")->required();
  t->add_option("--epochs", tr.config.epochs, "total epochs");
  t->add_option("--batch-pairs", tr.config.batch_pairs, "pairs per batch (>= 2)");
  t->add_option("--lr", tr.config.learning_rate, "learning rate (<= 0: 0.05 * batch / 256 for sgd, 1e-3 for adam)");
  t->add_option("--momentum", tr.config.momentum, "SGD momentum");
  t->add_option("--weight-decay", tr.config.weight_decay, "L2 weight decay");
  t->add_option("--optimizer", tr.optimizer, "sgd or adam");
  t->add_flag("--no-stop-gradient", tr.no_stop_gradient, "ablation: keep targets in the graph");
  t->add_option("--val-pairs", tr.config.validation_pairs, "pairs held out from the end for validation");
  t->add_option("--val-batch", tr.config.validation_batch, "validation batch size");
  t->add_option("--max-steps", tr.max_steps, "stop after this many optimizer steps (0: no limit)");
  t->add_option("--threads", tr.config.threads, "patch preparation workers")->check(CLI::PositiveNumber);
  t->add_option("--out-dim", tr.out_dim, "descriptor width");
  t->add_option("--log-every", tr.log_every, "print the batch loss every N steps");
  t->add_flag("--resume", tr.resume, "continue from <out>/latest.ckpt when present");
  tr.config.validation_pairs = 256;
  t->callback([&] { action = [&] { return run_train(tr); }; });

  ValidateArgs va;
  auto* v = app.add_subcommand("validate", "batch matching accuracy on a dataset");
  v->add_option("--checkpoint", va.checkpoint, "trained checkpoint (omit for an untrained encoder)");
  v->add_option("--data", va.data, "dataset directory")->required();
  v->add_option("--batch", va.batch, "pairs per matching batch");
  v->add_option("--last", va.last, "use only the last N pairs (0: all)");
  v->add_flag("--compare-untrained", va.compare_untrained, "also report an untrained encoder");
  v->add_option("--seed", va.seed, "seed of the untrained encoder");
  v->callback([&] { action = [&] { return run_validate(va); }; });

  ClusterArgs ca;
  auto* c = app.add_subcommand("cluster-eval", "quadric-class clustering of neural and classical descriptors");
  c->add_option("--checkpoint", ca.checkpoint, "trained checkpoint");
  c->add_option("--out", ca.out, "output directory")->required();
  c->add_option("--seed", ca.config.seed, "patch seed")->required();
  c->add_option("--per-class", ca.config.per_class, "patches per class");
  c->add_option("--points", ca.config.points, "points per patch");
  c->add_option("--noise", ca.config.noise_sigma, "z noise sigma");
  c->add_option("--curvature-scale", ca.config.curvature_scale, "quadric curvature scale");
  c->add_option("--threads", ca.threads, "worker threads")->check(CLI::PositiveNumber);
  c->callback([&] { action = [&] { return run_cluster(ca); }; });

  TransitionArgs ta;
  auto* tt = app.add_subcommand("transition-eval", "hyperbolic-to-spherical descriptor path");
  tt->add_option("--checkpoint", ta.checkpoint, "trained checkpoint");
  tt->add_option("--out", ta.out, "output directory")->required();
  tt->add_option("--seed", ta.config.seed, "sampling seed")->required();
  tt->add_option("--steps", ta.config.steps, "interpolation steps");
  tt->add_option("--points", ta.config.points, "points per patch");
  tt->add_option("--curvature-scale", ta.config.curvature_scale, "quadric curvature scale");
  tt->add_option("--threads", ta.threads, "worker threads")->check(CLI::PositiveNumber);
  tt->callback([&] { action = [&] { return run_transition(ta); }; });

  MatchArgs ma;
  auto* m = app.add_subcommand("match", "dense descriptor matching between two meshes");
  m->add_option("--checkpoint", ma.checkpoint, "trained checkpoint");
  m->add_option("--mesh-a", ma.mesh_a, "source mesh (.off/.ply)")->required();
  m->add_option("--mesh-b", ma.mesh_b, "target mesh (.off/.ply)")->required();
  m->add_option("--gt", ma.gt, "ground-truth map file (A vertex -> B vertex)");
  m->add_option("--out", ma.out, "output directory")->required();
  m->add_option("--k", ma.k, "patch neighbours per vertex");
  m->add_flag("--zoomout", ma.use_zoomout, "refine with ZoomOut");
  m->add_option("--k0", ma.k0, "ZoomOut initial spectral size");
  m->add_option("--step", ma.step, "ZoomOut step");
  m->add_option("--k-max", ma.k_max, "ZoomOut final size (0: min(100, |V| - 2))");
  m->add_option("--metric", ma.metric, "cosine or euclidean");
  m->add_option("--threads", ma.threads, "descriptor workers")->check(CLI::PositiveNumber);
  m->add_option("--seed", ma.seed, "seed of the untrained encoder when no checkpoint is given");
  m->callback([&] { action = [&] { return run_match(ma); }; });

  CurveArgs ea;
  auto* e = app.add_subcommand("error-curve", "geodesic error curve of a point map");
  e->add_option("--map", ea.map, "point map file")->required();
  e->add_option("--gt", ea.gt, "ground-truth map file")->required();
  e->add_option("--mesh-b", ea.mesh_b, "target mesh")->required();
  e->add_option("--out", ea.out, "output directory")->required();
  e->callback([&] { action = [&] { return run_curve(ea); }; });

  try {
    std::vector<const char*> cargs;
    for (const auto& s : args) cargs.push_back(s.c_str());
    app.parse(static_cast<int>(cargs.size()), cargs.data());
  } catch (const CLI::Success& ok) {
    return app.exit(ok);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return kExitConfig;
  }

  try {
    return action();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const Error& e) {
    // Shape, topology and degenerate-input errors reject the given input.
    std::cerr << "invalid input: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
