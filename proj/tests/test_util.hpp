#pragma once

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include <unistd.h>

#include <gtest/gtest.h>

#include "ndesc/geomcore.hpp"
#include "ndesc/patchgen.hpp"

namespace ndesc::test {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("ndesc_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
  std::filesystem::path path_;
};

// Regular n x n grid over [-half, half]^2 triangulated into 2(n-1)^2 faces,
// lifted by f.
template <class F>
TriMesh grid_mesh(int n, double half, F&& f) {
  TriMesh mesh;
  mesh.vertices.resize(n * n, 3);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double x = -half + 2.0 * half * i / (n - 1);
      const double y = -half + 2.0 * half * j / (n - 1);
      mesh.vertices.row(i * n + j) << x, y, f(x, y);
    }
  for (int i = 0; i + 1 < n; ++i)
    for (int j = 0; j + 1 < n; ++j) {
      const int a = i * n + j, b = (i + 1) * n + j, c = (i + 1) * n + j + 1, d = i * n + j + 1;
      mesh.faces.push_back({a, b, c});
      mesh.faces.push_back({a, c, d});
    }
  return mesh;
}

inline TriMesh flat_grid(int n, double half = 1.0) {
  return grid_mesh(n, half, [](double, double) { return 0.0; });
}

inline Eigen::Matrix3d random_rotation(Rng& rng) {
  Eigen::Vector4d q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  q.normalize();
  return Eigen::Quaterniond(q[0], q[1], q[2], q[3]).toRotationMatrix();
}

// All-pairs shortest paths on the edge graph.
inline Eigen::MatrixXd floyd_warshall(const TriMesh& mesh) {
  const auto n = static_cast<Eigen::Index>(mesh.vertex_count());
  Eigen::MatrixXd d = Eigen::MatrixXd::Constant(n, n, std::numeric_limits<double>::infinity());
  for (Eigen::Index i = 0; i < n; ++i) d(i, i) = 0.0;
  for (const Face& f : mesh.faces)
    for (int e = 0; e < 3; ++e) {
      const int a = f[e], b = f[(e + 1) % 3];
      const double len = (mesh.vertices.row(a) - mesh.vertices.row(b)).norm();
      d(a, b) = std::min(d(a, b), len);
      d(b, a) = std::min(d(b, a), len);
    }
  for (Eigen::Index k = 0; k < n; ++k)
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) d(i, j) = std::min(d(i, j), d(i, k) + d(k, j));
  return d;
}

// Exhaustive nearest row of b for each row of a: largest cosine (zero rows
// score 0) or smallest squared distance, first index wins ties.
inline std::vector<int> brute_nn(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, bool cosine) {
  std::vector<int> out;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    int best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
      double score = 0.0;
      if (cosine) {
        const double na = a.row(i).norm(), nb = b.row(j).norm();
        score = na > 0 && nb > 0 ? a.row(i).dot(b.row(j)) / (na * nb) : 0.0;
      } else {
        score = -(a.row(i) - b.row(j)).squaredNorm();
      }
      if (score > best_score) {
        best_score = score;
        best = static_cast<int>(j);
      }
    }
    out.push_back(best);
  }
  return out;
}

// Connected, asymmetric test surface: Delaunay mesh of a random polynomial
// patch.
inline TriMesh random_patch_mesh(std::uint64_t seed, std::size_t n) {
  Rng rng(seed);
  return delaunay_2d(sample_patch(sample_polynomial(rng, 2, 4, 1.0), n, 1.0, rng).points).mesh;
}

}  // namespace ndesc::test
