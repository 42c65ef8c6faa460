#include "ndesc/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>

#include <Eigen/Eigenvalues>

#include "ndesc/errors.hpp"

namespace ndesc {

namespace {

void check_vertex(const SpectralBasis& basis, std::size_t vertex, const char* what) {
  if (basis.size() == 0) throw ConfigError(std::string(what) + ": empty spectral basis");
  if (vertex >= static_cast<std::size_t>(basis.eigenfunctions.rows()))
    throw ConfigError(std::string(what) + ": vertex " + std::to_string(vertex) + " out of range");
}

// Indices of eigenvalues treated as positive for WKS.
std::vector<Eigen::Index> positive_modes(const SpectralBasis& basis) {
  const double top = basis.eigenvalues.maxCoeff();
  std::vector<Eigen::Index> out;
  for (Eigen::Index i = 0; i < basis.size(); ++i)
    if (basis.eigenvalues[i] > 0.0 && basis.eigenvalues[i] > 1e-9 * top) out.push_back(i);
  return out;
}

// Normalized Gaussian weights over log eigenvalues for one energy, computed
// relative to the largest exponent so far-away energies do not underflow.
Eigen::VectorXd wks_weights(const Eigen::VectorXd& log_lambda, double energy, double sigma) {
  Eigen::VectorXd a = (-(energy - log_lambda.array()).square() / (2.0 * sigma * sigma)).matrix();
  const Eigen::VectorXd w = (a.array() - a.maxCoeff()).exp().matrix();
  return w / w.sum();
}

}  // namespace

Eigen::VectorXd hks(const SpectralBasis& basis, std::size_t vertex, std::span<const double> times) {
  check_vertex(basis, vertex, "hks");
  const Eigen::ArrayXd phi2 = basis.eigenfunctions.row(static_cast<Eigen::Index>(vertex)).transpose().array().square();
  Eigen::VectorXd out(static_cast<Eigen::Index>(times.size()));
  for (std::size_t t = 0; t < times.size(); ++t) {
    if (!(times[t] > 0.0)) throw ConfigError("hks: times must be positive");
    out[static_cast<Eigen::Index>(t)] = ((-basis.eigenvalues.array() * times[t]).exp() * phi2).sum();
  }
  return out;
}

Eigen::MatrixXd hks_field(const SpectralBasis& basis, std::span<const double> times) {
  if (basis.size() == 0) throw ConfigError("hks: empty spectral basis");
  Eigen::MatrixXd decay(basis.size(), static_cast<Eigen::Index>(times.size()));
  for (std::size_t t = 0; t < times.size(); ++t) {
    if (!(times[t] > 0.0)) throw ConfigError("hks: times must be positive");
    decay.col(static_cast<Eigen::Index>(t)) = (-basis.eigenvalues.array() * times[t]).exp().matrix();
  }
  return basis.eigenfunctions.array().square().matrix() * decay;
}

std::vector<double> default_hks_times(const SpectralBasis& basis, std::size_t count) {
  if (basis.size() < 3) throw ConfigError("hks: need at least three eigenpairs for default times");
  if (count == 0) throw ConfigError("hks: time count must be positive");
  const double l2 = basis.eigenvalues[1];
  const double lk = basis.eigenvalues[basis.size() - 1];
  if (!(l2 > 0.0) || !(lk > l2)) throw ConfigError("hks: degenerate spectrum for default times");
  const double lo = std::log(4.0 * std::log(10.0) / lk);
  const double hi = std::log(4.0 * std::log(10.0) / l2);
  std::vector<double> times(count);
  for (std::size_t i = 0; i < count; ++i)
    times[i] = std::exp(count == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count - 1));
  return times;
}

Eigen::VectorXd wks(const SpectralBasis& basis, std::size_t vertex, const WksParams& params) {
  check_vertex(basis, vertex, "wks");
  if (!(params.sigma > 0.0)) throw ConfigError("wks: sigma must be positive");
  const auto modes = positive_modes(basis);
  if (modes.empty()) throw ConfigError("wks: no positive eigenvalues");
  Eigen::VectorXd log_lambda(static_cast<Eigen::Index>(modes.size()));
  Eigen::VectorXd phi2(log_lambda.size());
  for (std::size_t m = 0; m < modes.size(); ++m) {
    log_lambda[static_cast<Eigen::Index>(m)] = std::log(basis.eigenvalues[modes[m]]);
    const double phi = basis.eigenfunctions(static_cast<Eigen::Index>(vertex), modes[m]);
    phi2[static_cast<Eigen::Index>(m)] = phi * phi;
  }
  Eigen::VectorXd out(static_cast<Eigen::Index>(params.energies.size()));
  for (std::size_t e = 0; e < params.energies.size(); ++e)
    out[static_cast<Eigen::Index>(e)] = wks_weights(log_lambda, params.energies[e], params.sigma).dot(phi2);
  return out;
}

Eigen::MatrixXd wks_field(const SpectralBasis& basis, const WksParams& params) {
  if (basis.size() == 0) throw ConfigError("wks: empty spectral basis");
  if (!(params.sigma > 0.0)) throw ConfigError("wks: sigma must be positive");
  const auto modes = positive_modes(basis);
  if (modes.empty()) throw ConfigError("wks: no positive eigenvalues");
  Eigen::VectorXd log_lambda(static_cast<Eigen::Index>(modes.size()));
  Eigen::MatrixXd phi2(basis.eigenfunctions.rows(), log_lambda.size());
  for (std::size_t m = 0; m < modes.size(); ++m) {
    log_lambda[static_cast<Eigen::Index>(m)] = std::log(basis.eigenvalues[modes[m]]);
    phi2.col(static_cast<Eigen::Index>(m)) = basis.eigenfunctions.col(modes[m]).array().square().matrix();
  }
  Eigen::MatrixXd weights(log_lambda.size(), static_cast<Eigen::Index>(params.energies.size()));
  for (std::size_t e = 0; e < params.energies.size(); ++e)
    weights.col(static_cast<Eigen::Index>(e)) = wks_weights(log_lambda, params.energies[e], params.sigma);
  return phi2 * weights;
}

WksParams default_wks_params(const SpectralBasis& basis, std::size_t count) {
  if (count < 2) throw ConfigError("wks: need at least two energies");
  const auto modes = positive_modes(basis);
  if (modes.size() < 2) throw ConfigError("wks: need at least two positive eigenvalues for default energies");
  const double lo = std::log(basis.eigenvalues[modes.front()]);
  const double hi = std::log(basis.eigenvalues[modes.back()]);
  if (!(hi > lo)) throw ConfigError("wks: degenerate spectrum for default energies");
  WksParams params;
  params.sigma = 7.0 * (hi - lo) / static_cast<double>(count);
  const double e0 = lo + 2.0 * params.sigma;
  const double e1 = hi - 2.0 * params.sigma;
  params.energies.resize(count);
  for (std::size_t i = 0; i < count; ++i)
    params.energies[i] = e0 + (e1 - e0) * static_cast<double>(i) / static_cast<double>(count - 1);
  return params;
}

// ---------------------------------------------------------------------------

Eigen::VectorXd shot_lite(const Points& points, const Points& normals, std::size_t center,
                          const ShotParams& params) {
  if (points.rows() != normals.rows()) throw ShapeError("shot_lite: points and normals differ in count");
  if (center >= static_cast<std::size_t>(points.rows())) throw ConfigError("shot_lite: center out of range");
  if (params.spatial_bins != 8) throw ConfigError("shot_lite: only 8 spatial bins (octants) are supported");
  if (params.angle_bins < 1) throw ConfigError("shot_lite: angle bins must be positive");
  if (!(params.radius > 0.0)) throw ConfigError("shot_lite: radius must be positive");

  const Eigen::Vector3d c = points.row(static_cast<Eigen::Index>(center)).transpose();
  std::vector<Eigen::Index> ball;
  for (Eigen::Index i = 0; i < points.rows(); ++i)
    if ((points.row(i).transpose() - c).norm() <= params.radius) ball.push_back(i);
  if (ball.size() < 10)
    throw DegenerateInputError("shot_lite: only " + std::to_string(ball.size()) +
                               " points within radius (need 10)");

  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  double weight_sum = 0.0;
  for (Eigen::Index i : ball) {
    const Eigen::Vector3d d = points.row(i).transpose() - c;
    const double w = params.radius - d.norm();
    cov += w * d * d.transpose();
    weight_sum += w;
  }
  if (!(weight_sum > 0.0)) throw DegenerateInputError("shot_lite: all neighbours on the support boundary");
  cov /= weight_sum;
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
  Eigen::Vector3d x = eig.eigenvectors().col(2);
  Eigen::Vector3d z = eig.eigenvectors().col(0);

  // Point the axis toward the majority of neighbours; exact ties fall back to
  // the summed projection.
  auto disambiguate = [&](Eigen::Vector3d& axis) {
    int positive = 0;
    int negative = 0;
    double total = 0.0;
    for (Eigen::Index i : ball) {
      const double p = (points.row(i).transpose() - c).dot(axis);
      if (p > 0.0) ++positive; else if (p < 0.0) ++negative;  // the centre votes for neither sign
      total += p;
    }
    if (negative > positive || (negative == positive && total < 0.0)) axis = -axis;
  };
  disambiguate(x);
  disambiguate(z);
  const Eigen::Vector3d y = z.cross(x);

  const int bins = params.angle_bins;
  Eigen::VectorXd hist = Eigen::VectorXd::Zero(8 * bins);
  const Eigen::Vector3d nc = normals.row(static_cast<Eigen::Index>(center)).transpose();
  for (Eigen::Index i : ball) {
    if (i == static_cast<Eigen::Index>(center)) continue;
    const Eigen::Vector3d d = points.row(i).transpose() - c;
    const int octant = (d.dot(x) < 0.0 ? 1 : 0) | (d.dot(y) < 0.0 ? 2 : 0) | (d.dot(z) < 0.0 ? 4 : 0);
    const double cosine = std::clamp(normals.row(i).dot(nc.transpose()), -1.0, 1.0);
    const int bin = std::min(static_cast<int>((cosine + 1.0) * 0.5 * bins), bins - 1);
    hist[octant * bins + bin] += 1.0;
  }
  const double norm = hist.norm();
  if (norm > 0.0) hist /= norm;
  return hist;
}

// ---------------------------------------------------------------------------

PatchMesh mesh_patch(const PatchCloud& patch) {
  if (!patch.origin_index) throw ConfigError("patch has no origin point to describe");
  const Triangulation tri = delaunay_2d(patch.points);
  const int v = tri.vertex_of_input.at(*patch.origin_index);
  if (v < 0) throw DegenerateInputError("origin point was dropped by triangulation");
  return {tri.mesh, static_cast<std::size_t>(v)};
}

ClassicalDescriptors classical_patch_descriptors(const PatchCloud& patch, const ClassicalConfig& config) {
  const PatchMesh pm = mesh_patch(patch);
  const CotanLaplacian lap = cotan_laplacian(pm.mesh);
  const std::size_t k = std::min(config.spectral_k, pm.mesh.vertex_count() - 1);
  const SpectralBasis basis = eigendecompose(lap.stiffness, lap.lumped_mass, k);

  ClassicalDescriptors out;
  out.hks = hks(basis, pm.origin_vertex, default_hks_times(basis, config.hks_count));
  out.wks = wks(basis, pm.origin_vertex, default_wks_params(basis, config.wks_count));
  const NormalField normals = estimate_normals(patch.points, config.normal_k);
  ShotParams shot;
  shot.radius = config.shot_radius * patch.domain_radius;
  out.shot = shot_lite(patch.points, normals.normals, *patch.origin_index, shot);
  return out;
}

// ---------------------------------------------------------------------------

PcaResult descriptor_pca(const Eigen::MatrixXd& descriptors, int out_dim) {
  const Eigen::Index n = descriptors.rows();
  const Eigen::Index d = descriptors.cols();
  if (out_dim < 1 || out_dim > d) throw ConfigError("pca: output dimension out of range");
  if (n < out_dim + 1) throw ConfigError("pca: need at least out_dim + 1 samples");
  if (!descriptors.allFinite()) throw ConfigError("pca: non-finite descriptor entries");

  PcaResult out;
  out.mean = descriptors.colwise().mean();
  const Eigen::MatrixXd centred = descriptors.rowwise() - out.mean;
  const double denom = static_cast<double>(n - 1);
  out.axes = Eigen::MatrixXd::Zero(d, out_dim);
  out.ratios = Eigen::VectorXd::Zero(out_dim);

  double total = 0.0;
  if (d <= n) {
    const Eigen::MatrixXd cov = centred.transpose() * centred / denom;
    total = cov.trace();
    if (!(total > 0.0)) throw DegenerateInputError("pca: descriptors have zero variance");
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    for (int c = 0; c < out_dim; ++c) {
      out.axes.col(c) = eig.eigenvectors().col(d - 1 - c);
      out.ratios[c] = std::max(eig.eigenvalues()[d - 1 - c], 0.0) / total;
    }
  } else {
    // Fewer samples than dimensions: work with the n x n Gram matrix.
    const Eigen::MatrixXd gram = centred * centred.transpose() / denom;
    total = gram.trace();
    if (!(total > 0.0)) throw DegenerateInputError("pca: descriptors have zero variance");
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
    for (int c = 0; c < out_dim; ++c) {
      const double lambda = eig.eigenvalues()[n - 1 - c];
      if (lambda <= 1e-14 * total) continue;  // rank-deficient: leave a zero axis
      out.axes.col(c) = centred.transpose() * eig.eigenvectors().col(n - 1 - c) / std::sqrt(lambda * denom);
      out.ratios[c] = lambda / total;
    }
  }
  for (int c = 0; c < out_dim; ++c) {
    Eigen::Index arg = 0;
    out.axes.col(c).cwiseAbs().maxCoeff(&arg);
    if (out.axes(arg, c) < 0.0) out.axes.col(c) = -out.axes.col(c);
  }
  out.coords = centred * out.axes;
  return out;
}

double silhouette_score(const Eigen::MatrixXd& points, std::span<const int> labels) {
  const Eigen::Index n = points.rows();
  if (static_cast<std::size_t>(n) != labels.size()) throw ShapeError("silhouette: label count differs from point count");
  std::map<int, std::vector<Eigen::Index>> clusters;
  for (Eigen::Index i = 0; i < n; ++i) clusters[labels[static_cast<std::size_t>(i)]].push_back(i);
  if (clusters.size() < 2) throw ConfigError("silhouette: need at least two clusters");

  double sum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int own = labels[static_cast<std::size_t>(i)];
    if (clusters[own].size() == 1) continue;
    double a = 0.0;
    double b = std::numeric_limits<double>::infinity();
    for (const auto& [label, members] : clusters) {
      double total = 0.0;
      for (Eigen::Index j : members) total += (points.row(i) - points.row(j)).norm();
      if (label == own)
        a = total / static_cast<double>(members.size() - 1);
      else
        b = std::min(b, total / static_cast<double>(members.size()));
    }
    const double m = std::max(a, b);
    sum += m > 0.0 ? (b - a) / m : 0.0;
  }
  return sum / static_cast<double>(n);
}

void write_descriptor_csv(const std::filesystem::path& path, const DescriptorField& field) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "index";
  for (Eigen::Index c = 0; c < field.values.cols(); ++c) out << ",d" << c;
  out << '\n' << std::setprecision(9);
  for (Eigen::Index r = 0; r < field.values.rows(); ++r) {
    out << r;
    for (Eigen::Index c = 0; c < field.values.cols(); ++c) out << ',' << field.values(r, c);
    out << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace ndesc
