#include "ndesc/patchgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include <json.hpp>

#include "ndesc/binary_io.hpp"
#include "ndesc/errors.hpp"
#include "ndesc/parallel.hpp"

namespace ndesc {

Polynomial2D::Polynomial2D(int degree) : degree_(degree) {
  if (degree < 0 || degree > kMaxDegree)
    throw ConfigError("polynomial degree " + std::to_string(degree) + " outside [0, " +
                      std::to_string(kMaxDegree) + "]");
  coeffs_.assign(coeff_count(degree), 0.0);
}

Polynomial2D::Polynomial2D(int degree, std::vector<double> coeffs) : Polynomial2D(degree) {
  if (coeffs.size() != coeffs_.size())
    throw ShapeError("degree " + std::to_string(degree) + " polynomial needs " +
                     std::to_string(coeffs_.size()) + " coefficients, got " +
                     std::to_string(coeffs.size()));
  for (double c : coeffs)
    if (!std::isfinite(c)) throw ConfigError("non-finite polynomial coefficient");
  coeffs_ = std::move(coeffs);
}

std::size_t Polynomial2D::index(int i, int j) const {
  return static_cast<std::size_t>(i * (degree_ + 1) - i * (i - 1) / 2 + j);
}

double Polynomial2D::operator()(double x, double y) const {
  double result = 0.0;
  for (int i = degree_; i >= 0; --i) {
    double inner = 0.0;
    for (int j = degree_ - i; j >= 0; --j) inner = inner * y + coeff(i, j);
    result = result * x + inner;
  }
  return result;
}

Polynomial2D Polynomial2D::derivative(int dx, int dy) const {
  const int out_degree = std::max(0, degree_ - dx - dy);
  Polynomial2D out(out_degree);
  for (int i = dx; i <= degree_; ++i) {
    for (int j = dy; i + j <= degree_; ++j) {
      double factor = 1.0;
      for (int k = 0; k < dx; ++k) factor *= i - k;
      for (int k = 0; k < dy; ++k) factor *= j - k;
      out.coeff(i - dx, j - dy) += factor * coeff(i, j);
    }
  }
  return out;
}

Polynomial2D sample_polynomial(Rng& rng, int degree_min, int degree_max, double coeff_scale) {
  if (degree_min < 1 || degree_min > degree_max || degree_max > Polynomial2D::kMaxDegree)
    throw ConfigError("degree range [" + std::to_string(degree_min) + ", " +
                      std::to_string(degree_max) + "] must satisfy 1 <= min <= max <= 6");
  if (!(coeff_scale >= 0.0) || !std::isfinite(coeff_scale))
    throw ConfigError("coefficient scale must be finite and non-negative");
  const int degree = static_cast<int>(rng.uniform_int(degree_min, degree_max));
  std::vector<double> coeffs(Polynomial2D::coeff_count(degree));
  for (double& c : coeffs) c = rng.uniform(-coeff_scale, coeff_scale);
  return Polynomial2D(degree, std::move(coeffs));
}

double eval_polynomial(const Polynomial2D& poly, double x, double y) { return poly(x, y); }

PatchCloud sample_patch(const Polynomial2D& poly, std::size_t n, double domain_radius, Rng& rng,
                        bool include_origin) {
  if (n < kMinPatchPoints)
    throw ConfigError("patch needs at least " + std::to_string(kMinPatchPoints) + " points, got " +
                      std::to_string(n));
  if (!(domain_radius > 0.0) || !std::isfinite(domain_radius))
    throw ConfigError("domain radius must be positive");

  PatchCloud patch;
  patch.domain_radius = domain_radius;
  patch.points.resize(static_cast<Eigen::Index>(n), 3);
  std::size_t start = 0;
  if (include_origin) {
    patch.points.row(0) << 0.0, 0.0, poly(0.0, 0.0);
    patch.origin_index = 0;
    start = 1;
  }
  for (std::size_t i = start; i < n; ++i) {
    const double r = domain_radius * std::sqrt(rng.uniform());
    const double theta = 2.0 * std::numbers::pi * rng.uniform();
    const double x = r * std::cos(theta);
    const double y = r * std::sin(theta);
    patch.points.row(static_cast<Eigen::Index>(i)) << x, y, poly(x, y);
  }
  return patch;
}

PatchPair make_pair(const Polynomial2D& poly, std::size_t n1, std::size_t n2, Rng& rng,
                    double domain_radius, std::uint64_t source_id) {
  PatchPair pair;
  pair.a = sample_patch(poly, n1, domain_radius, rng);
  pair.b = sample_patch(poly, n2, domain_radius, rng);
  pair.a.source_id = source_id;
  pair.b.source_id = source_id;
  pair.source_id = source_id;
  return pair;
}

PatchCloud add_z_noise(const PatchCloud& patch, double sigma, Rng& rng) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma))
    throw ConfigError("noise sigma must be finite and non-negative");
  PatchCloud out = patch;
  if (sigma == 0.0) return out;
  for (Eigen::Index i = 0; i < out.points.rows(); ++i) out.points(i, 2) += rng.normal(0.0, sigma);
  return out;
}

Polynomial2D quadric_family(QuadricKind kind, double curvature_scale, Rng& rng) {
  if (!(curvature_scale > 0.0)) throw ConfigError("curvature scale must be positive");
  auto magnitude = [&] { return rng.uniform(0.3, 1.5) * curvature_scale; };
  double k1 = 0.0;
  double k2 = 0.0;
  switch (kind) {
    case QuadricKind::Spherical:
      k1 = magnitude();
      k2 = magnitude();
      break;
    case QuadricKind::Parabolic: {
      const double k = magnitude() * (rng.uniform() < 0.5 ? -1.0 : 1.0);
      if (rng.uniform() < 0.5)
        k1 = k;
      else
        k2 = k;
      break;
    }
    case QuadricKind::Hyperbolic:
      k1 = magnitude();
      k2 = -magnitude();
      if (rng.uniform() < 0.5) std::swap(k1, k2);
      break;
    case QuadricKind::Planar:
      break;
  }
  Polynomial2D poly(2);
  poly.coeff(1, 0) = rng.uniform(-0.1, 0.1);
  poly.coeff(0, 1) = rng.uniform(-0.1, 0.1);
  poly.coeff(2, 0) = k1;
  poly.coeff(0, 2) = k2;
  return poly;
}

const char* quadric_name(QuadricKind kind) {
  switch (kind) {
    case QuadricKind::Spherical: return "spherical";
    case QuadricKind::Parabolic: return "parabolic";
    case QuadricKind::Hyperbolic: return "hyperbolic";
    case QuadricKind::Planar: return "planar";
  }
  return "unknown";
}

Polynomial2D interpolate_polys(const Polynomial2D& a, const Polynomial2D& b, double t) {
  if (a.degree() != b.degree())
    throw ShapeError("cannot interpolate polynomials of degree " + std::to_string(a.degree()) +
                     " and " + std::to_string(b.degree()));
  std::vector<double> coeffs(a.coeffs().size());
  for (std::size_t i = 0; i < coeffs.size(); ++i)
    coeffs[i] = (1.0 - t) * a.coeffs()[i] + t * b.coeffs()[i];
  return Polynomial2D(a.degree(), std::move(coeffs));
}

MongeCurvature monge_curvature(const Polynomial2D& poly, double x, double y) {
  const double fx = poly.derivative(1, 0)(x, y);
  const double fy = poly.derivative(0, 1)(x, y);
  const double fxx = poly.derivative(2, 0)(x, y);
  const double fyy = poly.derivative(0, 2)(x, y);
  const double fxy = poly.derivative(1, 1)(x, y);
  const double g = 1.0 + fx * fx + fy * fy;
  MongeCurvature k;
  k.gaussian = (fxx * fyy - fxy * fxy) / (g * g);
  k.mean = ((1.0 + fx * fx) * fyy - 2.0 * fx * fy * fxy + (1.0 + fy * fy) * fxx) /
           (2.0 * std::pow(g, 1.5));
  return k;
}

// ---------------------------------------------------------------------------

void GenerationConfig::validate() const {
  if (degree_min < 1 || degree_min > degree_max || degree_max > Polynomial2D::kMaxDegree)
    throw ConfigError("degree range must satisfy 1 <= degree_min <= degree_max <= 6");
  if (!(coeff_scale >= 0.0) || !std::isfinite(coeff_scale))
    throw ConfigError("coeff_scale must be finite and non-negative");
  if (n_min < kMinPatchPoints || n_min > n_max)
    throw ConfigError("point-count range must satisfy 16 <= n_min <= n_max");
  if (!(domain_radius > 0.0) || !std::isfinite(domain_radius))
    throw ConfigError("domain_radius must be positive");
}

namespace {

void round_to_float(Points& points) {
  for (Eigen::Index i = 0; i < points.size(); ++i)
    points.data()[i] = static_cast<double>(static_cast<float>(points.data()[i]));
}

PatchPair generate_pair(const GenerationConfig& config, std::uint64_t seed, std::size_t index) {
  Rng rng(derive_seed(seed, index));
  const Polynomial2D poly =
      sample_polynomial(rng, config.degree_min, config.degree_max, config.coeff_scale);
  const auto lo = static_cast<std::int64_t>(config.n_min);
  const auto hi = static_cast<std::int64_t>(config.n_max);
  const auto n1 = static_cast<std::size_t>(rng.uniform_int(lo, hi));
  const auto n2 = static_cast<std::size_t>(rng.uniform_int(lo, hi));
  PatchPair pair = make_pair(poly, n1, n2, rng, config.domain_radius, index);
  round_to_float(pair.a.points);
  round_to_float(pair.b.points);
  return pair;
}

}  // namespace

Dataset generate_dataset(const GenerationConfig& config, std::size_t n_pairs, std::uint64_t seed,
                         unsigned threads) {
  config.validate();
  if (n_pairs == 0) throw ConfigError("dataset needs at least one pair");
  Dataset dataset;
  dataset.seed = seed;
  dataset.config = config;
  dataset.pairs.resize(n_pairs);

  parallel_for(n_pairs, threads, [&](std::size_t i) { dataset.pairs[i] = generate_pair(config, seed, i); });
  return dataset;
}

void write_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create dataset directory " + dir.string() + ": " + ec.message());

  nlohmann::json manifest;
  manifest["version"] = kDatasetVersion;
  manifest["seed"] = dataset.seed;
  manifest["config"] = {{"degree_min", dataset.config.degree_min},
                        {"degree_max", dataset.config.degree_max},
                        {"coeff_scale", dataset.config.coeff_scale},
                        {"n_min", dataset.config.n_min},
                        {"n_max", dataset.config.n_max},
                        {"domain_radius", dataset.config.domain_radius}};
  nlohmann::json records = nlohmann::json::array();

  std::ofstream blob(dir / "points.f32le", std::ios::binary | std::ios::trunc);
  if (!blob) throw IoError("cannot open " + (dir / "points.f32le").string() + " for writing");
  std::uint64_t offset = 0;
  auto write_points = [&](const Points& points) {
    std::vector<float> buffer(static_cast<std::size_t>(points.size()));
    for (Eigen::Index i = 0; i < points.size(); ++i)
      buffer[static_cast<std::size_t>(i)] = static_cast<float>(points.data()[i]);
    write_f32le(blob, buffer);
    const std::uint64_t at = offset;
    offset += static_cast<std::uint64_t>(points.rows());
    return at;
  };
  for (const PatchPair& pair : dataset.pairs) {
    const std::uint64_t offset_a = write_points(pair.a.points);
    const std::uint64_t offset_b = write_points(pair.b.points);
    records.push_back({{"offset_a", offset_a},
                       {"count_a", pair.a.size()},
                       {"offset_b", offset_b},
                       {"count_b", pair.b.size()},
                       {"source_id", pair.source_id}});
  }
  blob.close();
  if (!blob) throw IoError("failed writing " + (dir / "points.f32le").string());
  manifest["pairs"] = std::move(records);

  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw IoError("cannot open " + (dir / "manifest.json").string() + " for writing");
  out << manifest.dump(1) << '\n';
  if (!out) throw IoError("failed writing " + (dir / "manifest.json").string());
}

Dataset read_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IoError("cannot open " + (dir / "manifest.json").string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed manifest: " + std::string(e.what()));
  }

  Dataset dataset;
  std::vector<float> blob;
  try {
    const int version = manifest.at("version").get<int>();
    if (version != kDatasetVersion)
      throw IoError("dataset version " + std::to_string(version) + " unsupported (expected " +
                    std::to_string(kDatasetVersion) + ")");
    dataset.seed = manifest.at("seed").get<std::uint64_t>();
    const auto& cfg = manifest.at("config");
    dataset.config.degree_min = cfg.at("degree_min").get<int>();
    dataset.config.degree_max = cfg.at("degree_max").get<int>();
    dataset.config.coeff_scale = cfg.at("coeff_scale").get<double>();
    dataset.config.n_min = cfg.at("n_min").get<std::size_t>();
    dataset.config.n_max = cfg.at("n_max").get<std::size_t>();
    dataset.config.domain_radius = cfg.at("domain_radius").get<double>();

    blob = read_f32le_file(dir / "points.f32le");
    const std::uint64_t total_points = blob.size() / 3;
    if (blob.size() % 3 != 0)
      throw IoError("points.f32le holds a partial point (" + std::to_string(blob.size()) +
                    " floats)");

    const auto& records = manifest.at("pairs");
    if (!records.is_array()) throw IoError("manifest 'pairs' is not an array");
    std::uint64_t expected_offset = 0;
    auto take = [&](std::size_t record, std::uint64_t offset, std::uint64_t count,
                    const char* side) {
      if (offset != expected_offset)
        throw IoError("record " + std::to_string(record) + ": offset_" + side + " " +
                      std::to_string(offset) + " overlaps or leaves a gap (expected " +
                      std::to_string(expected_offset) + ")");
      if (count < kMinPatchPoints)
        throw IoError("record " + std::to_string(record) + ": count_" + side + " below minimum");
      if (offset + count > total_points)
        throw IoError("record " + std::to_string(record) + ": blob truncated (needs " +
                      std::to_string(offset + count) + " points, file has " +
                      std::to_string(total_points) + ")");
      PatchCloud patch;
      patch.domain_radius = dataset.config.domain_radius;
      patch.points.resize(static_cast<Eigen::Index>(count), 3);
      for (std::uint64_t i = 0; i < 3 * count; ++i)
        patch.points.data()[i] = static_cast<double>(blob[3 * offset + i]);
      expected_offset = offset + count;
      return patch;
    };
    dataset.pairs.reserve(records.size());
    for (std::size_t r = 0; r < records.size(); ++r) {
      const auto& rec = records[r];
      PatchPair pair;
      pair.source_id = rec.at("source_id").get<std::uint64_t>();
      pair.a = take(r, rec.at("offset_a").get<std::uint64_t>(), rec.at("count_a").get<std::uint64_t>(),
                    "a");
      pair.b = take(r, rec.at("offset_b").get<std::uint64_t>(), rec.at("count_b").get<std::uint64_t>(),
                    "b");
      pair.a.source_id = pair.source_id;
      pair.b.source_id = pair.source_id;
      dataset.pairs.push_back(std::move(pair));
    }
    if (expected_offset != total_points)
      throw IoError("manifest records cover " + std::to_string(expected_offset) +
                    " points but blob holds " + std::to_string(total_points));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed manifest: " + std::string(e.what()));
  }
  return dataset;
}

}  // namespace ndesc
