#include "ndesc/correspond.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <unordered_map>

#include "ndesc/errors.hpp"
#include "ndesc/parallel.hpp"

namespace ndesc {

Eigen::MatrixXd dense_descriptors(const Points& points, const Encoder& encoder, std::size_t k,
                                  unsigned threads) {
  const auto n = static_cast<std::size_t>(points.rows());
  if (n <= k) throw ConfigError("dense descriptors need more than " + std::to_string(k) + " vertices");
  const KdTree tree(points);
  Eigen::MatrixXd out(static_cast<Eigen::Index>(n), encoder.config().out_dim);
  parallel_for(n, threads, [&](std::size_t v) {
    PatchCloud patch = extract_vertex_patch(tree, points, v, k);
    if (patch.domain_radius > 0.0) {
      patch.points /= patch.domain_radius;
      patch.domain_radius = 1.0;
    }
    out.row(static_cast<Eigen::Index>(v)) = encoder.encode(patch).transpose();
  });
  return out;
}

PointMap nn_match(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, MatchMetric metric) {
  if (a.cols() != b.cols())
    throw ShapeError("nn_match: descriptor widths differ (" + std::to_string(a.cols()) + " vs " +
                     std::to_string(b.cols()) + ")");
  if (b.rows() == 0) throw ShapeError("nn_match: empty target set");
  PointMap map(static_cast<std::size_t>(a.rows()), 0);

  auto unit_rows = [](const Eigen::MatrixXd& m) {
    Eigen::VectorXd inv = m.rowwise().norm();
    for (Eigen::Index i = 0; i < inv.size(); ++i) inv[i] = inv[i] > 0.0 ? 1.0 / inv[i] : 0.0;
    return Eigen::MatrixXd(inv.asDiagonal() * m);
  };
  const bool cosine = metric == MatchMetric::Cosine;
  const Eigen::MatrixXd bn = cosine ? unit_rows(b) : b;
  const Eigen::VectorXd b_sq = b.rowwise().squaredNorm();

  constexpr Eigen::Index kBlock = 256;
  for (Eigen::Index start = 0; start < a.rows(); start += kBlock) {
    const Eigen::Index rows = std::min(kBlock, a.rows() - start);
    const Eigen::MatrixXd block = cosine ? unit_rows(a.middleRows(start, rows)) : a.middleRows(start, rows);
    // Score to maximise: cosine, or -(|b|^2 - 2 a.b) (|a|^2 is constant per row).
    Eigen::MatrixXd score = block * bn.transpose();
    if (!cosine) score = (2.0 * score).rowwise() - b_sq.transpose();
    for (Eigen::Index r = 0; r < rows; ++r) {
      Eigen::Index best = 0;
      for (Eigen::Index j = 1; j < score.cols(); ++j)
        if (score(r, j) > score(r, best)) best = j;
      map[static_cast<std::size_t>(start + r)] = static_cast<int>(best);
    }
  }
  return map;
}

namespace {

void check_map(const PointMap& map, std::size_t source_count, std::size_t target_count, const char* what) {
  if (map.size() != source_count)
    throw ShapeError(std::string(what) + ": map has " + std::to_string(map.size()) + " entries, expected " +
                     std::to_string(source_count));
  for (std::size_t i = 0; i < map.size(); ++i)
    if (map[i] < 0 || static_cast<std::size_t>(map[i]) >= target_count)
      throw ShapeError(std::string(what) + ": entry " + std::to_string(i) + " out of range");
}

}  // namespace

FunctionalMap pointmap_to_fmap(const SpectralBasis& a, const SpectralBasis& b, const PointMap& map,
                               std::size_t k) {
  const auto kk = static_cast<Eigen::Index>(k);
  if (k == 0 || kk > a.size() || kk > b.size())
    throw ConfigError("pointmap_to_fmap: k=" + std::to_string(k) + " exceeds basis sizes (" +
                      std::to_string(a.size()) + ", " + std::to_string(b.size()) + ")");
  check_map(map, static_cast<std::size_t>(a.eigenfunctions.rows()), static_cast<std::size_t>(b.eigenfunctions.rows()),
            "pointmap_to_fmap");
  Eigen::MatrixXd pulled(a.eigenfunctions.rows(), kk);
  for (std::size_t i = 0; i < map.size(); ++i)
    pulled.row(static_cast<Eigen::Index>(i)) = b.eigenfunctions.row(map[i]).head(kk);
  const Eigen::MatrixXd ct = a.eigenfunctions.leftCols(kk).transpose() * a.lumped_mass.asDiagonal() * pulled;
  return ct.transpose();
}

PointMap zoomout(const SpectralBasis& a, const SpectralBasis& b, const PointMap& init, const ZoomOutParams& params) {
  const auto na = static_cast<std::size_t>(a.eigenfunctions.rows());
  const auto nb = static_cast<std::size_t>(b.eigenfunctions.rows());
  if (na < 3 || nb < 3) throw ConfigError("zoomout: meshes are too small");
  const std::size_t k_max = params.k_max.value_or(std::min<std::size_t>(100, std::min(na, nb) - 2));
  if (params.k0 == 0 || params.step == 0) throw ConfigError("zoomout: k0 and step must be positive");
  if (params.k0 >= k_max) throw ConfigError("zoomout: k0 must be below k_max");
  if (static_cast<Eigen::Index>(k_max) > a.size() || static_cast<Eigen::Index>(k_max) > b.size())
    throw ConfigError("zoomout: bases hold fewer than k_max=" + std::to_string(k_max) + " eigenpairs");
  check_map(init, na, nb, "zoomout");

  PointMap map = init;
  for (std::size_t k = params.k0;; k = std::min(k + params.step, k_max)) {
    const FunctionalMap c = pointmap_to_fmap(a, b, map, k);
    const auto kk = static_cast<Eigen::Index>(k);
    const Eigen::MatrixXd embedded = a.eigenfunctions.leftCols(kk) * c.transpose();
    map = nn_match(embedded, b.eigenfunctions.leftCols(kk), MatchMetric::Euclidean);
    if (k == k_max) break;
  }
  return map;
}

std::vector<double> default_thresholds() {
  std::vector<double> t(101);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.0025 * static_cast<double>(i);
  return t;
}

ErrorCurve geodesic_error_curve(const PointMap& map, const PointMap& gt, const TriMesh& mesh_b,
                                const std::vector<double>& thresholds) {
  const std::size_t nb = mesh_b.vertex_count();
  if (map.size() != gt.size()) throw ShapeError("error curve: map and ground truth differ in length");
  check_map(map, map.size(), nb, "error curve (map)");
  check_map(gt, gt.size(), nb, "error curve (ground truth)");
  if (!std::is_sorted(thresholds.begin(), thresholds.end()))
    throw ConfigError("error curve: thresholds must be ascending");
  if (geodesic_distances(mesh_b, 0).unreachable > 0)
    throw TopologyError("error curve: target mesh is disconnected");
  const double norm = std::sqrt(mesh_area(mesh_b));
  if (!(norm > 0.0)) throw DegenerateInputError("error curve: target mesh has zero area");

  ErrorCurve curve;
  curve.thresholds = thresholds;
  curve.errors.resize(static_cast<Eigen::Index>(map.size()));
  std::unordered_map<int, Eigen::VectorXd> fields;
  for (std::size_t i = 0; i < map.size(); ++i) {
    auto it = fields.find(gt[i]);
    if (it == fields.end())
      it = fields.emplace(gt[i], geodesic_distances(mesh_b, static_cast<std::size_t>(gt[i])).distance).first;
    curve.errors[static_cast<Eigen::Index>(i)] = it->second[map[i]] / norm;
  }
  const double n = static_cast<double>(map.size());
  for (double t : thresholds)
    curve.fraction.push_back(n > 0 ? static_cast<double>((curve.errors.array() <= t).count()) / n : 1.0);
  curve.mean_error = n > 0 ? curve.errors.mean() : 0.0;
  return curve;
}

SpectralBasis mesh_basis(const TriMesh& mesh, std::size_t k) {
  const CotanLaplacian lap = cotan_laplacian(mesh);
  return eigendecompose(lap.stiffness, lap.lumped_mass, k);
}

PointMap read_pointmap(const std::filesystem::path& path, std::optional<std::size_t> target_count) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open point map " + path.string());
  PointMap map;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ss(line);
    long long v = -1;
    std::string rest;
    if (!(ss >> v) || (ss >> rest) || v < 0 ||
        (target_count && static_cast<std::size_t>(v) >= *target_count) || v > std::numeric_limits<int>::max())
      throw IoError(path.string() + ":" + std::to_string(line_no) + ": invalid vertex index '" + line + "'");
    map.push_back(static_cast<int>(v));
  }
  return map;
}

void write_pointmap(const std::filesystem::path& path, const PointMap& map) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  for (int v : map) out << v << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

void write_error_curve_csv(const std::filesystem::path& path, const ErrorCurve& curve) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "threshold,fraction\n" << std::setprecision(9);
  for (std::size_t i = 0; i < curve.thresholds.size(); ++i) out << curve.thresholds[i] << ',' << curve.fraction[i] << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace ndesc
