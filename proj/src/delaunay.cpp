#include <algorithm>
#include <map>
#include <numeric>

#include "ndesc/errors.hpp"
#include "ndesc/geomcore.hpp"

namespace ndesc {

namespace {

using Real = long double;

struct P2 {
  Real x;
  Real y;
};

Real orient(const P2& a, const P2& b, const P2& c) {
  return (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
}

// > 0 iff d lies strictly inside the circumcircle of the counter-clockwise
// triangle (a, b, c). Coordinates are translated to d first.
Real incircle(const P2& a, const P2& b, const P2& c, const P2& d) {
  const Real adx = a.x - d.x, ady = a.y - d.y;
  const Real bdx = b.x - d.x, bdy = b.y - d.y;
  const Real cdx = c.x - d.x, cdy = c.y - d.y;
  const Real alift = adx * adx + ady * ady;
  const Real blift = bdx * bdx + bdy * bdy;
  const Real clift = cdx * cdx + cdy * cdy;
  return alift * (bdx * cdy - bdy * cdx) + blift * (cdx * ady - cdy * adx) +
         clift * (adx * bdy - ady * bdx);
}

constexpr double kMergeTolerance = 1e-12;
constexpr Real kSuperScale = 1e4L;

}  // namespace

Triangulation delaunay_2d(const Points& points) {
  const auto n_in = static_cast<int>(points.rows());
  if (n_in < 3) throw DegenerateInputError("Delaunay triangulation needs at least 3 points");

  // Normalise (x, y) into a unit box centred at the origin.
  const Eigen::Vector2d lo = points.leftCols<2>().colwise().minCoeff().transpose();
  const Eigen::Vector2d hi = points.leftCols<2>().colwise().maxCoeff().transpose();
  const double extent = (hi - lo).maxCoeff();
  if (!(extent > 0.0) || !std::isfinite(extent))
    throw DegenerateInputError("Delaunay input has zero (x, y) extent");
  const Eigen::Vector2d mid = 0.5 * (lo + hi);
  std::vector<P2> norm(static_cast<std::size_t>(n_in));
  for (int i = 0; i < n_in; ++i)
    norm[static_cast<std::size_t>(i)] = {static_cast<Real>((points(i, 0) - mid.x()) / extent),
                                         static_cast<Real>((points(i, 1) - mid.y()) / extent)};

  // Merge duplicates (within tolerance in normalised coordinates).
  std::vector<int> order(static_cast<std::size_t>(n_in));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const auto &pa = norm[static_cast<std::size_t>(a)], &pb = norm[static_cast<std::size_t>(b)];
    return pa.x < pb.x || (pa.x == pb.x && (pa.y < pb.y || (pa.y == pb.y && a < b)));
  });
  std::vector<int> unique_of_input(static_cast<std::size_t>(n_in), -1);
  std::vector<int> unique_inputs;  // representative input index per unique point
  for (std::size_t s = 0; s < order.size(); ++s) {
    const int i = order[s];
    const P2& p = norm[static_cast<std::size_t>(i)];
    int match = -1;
    for (std::size_t t = s; t-- > 0;) {
      const P2& q = norm[static_cast<std::size_t>(order[t])];
      if (p.x - q.x > kMergeTolerance) break;
      if (std::abs(static_cast<double>(p.y - q.y)) <= kMergeTolerance) {
        match = unique_of_input[static_cast<std::size_t>(order[t])];
        break;
      }
    }
    if (match < 0) {
      match = static_cast<int>(unique_inputs.size());
      unique_inputs.push_back(i);
    }
    unique_of_input[static_cast<std::size_t>(i)] = match;
  }
  const int n = static_cast<int>(unique_inputs.size());
  std::vector<P2> pts(static_cast<std::size_t>(n) + 3);
  for (int u = 0; u < n; ++u) pts[static_cast<std::size_t>(u)] = norm[static_cast<std::size_t>(unique_inputs[static_cast<std::size_t>(u)])];

  // Reject collinear input.
  {
    int far = 0;
    Real best = -1;
    for (int u = 1; u < n; ++u) {
      const Real dx = pts[static_cast<std::size_t>(u)].x - pts[0].x;
      const Real dy = pts[static_cast<std::size_t>(u)].y - pts[0].y;
      if (dx * dx + dy * dy > best) {
        best = dx * dx + dy * dy;
        far = u;
      }
    }
    Real spread = 0;
    for (int u = 0; u < n; ++u)
      spread = std::max(spread, std::abs(orient(pts[0], pts[static_cast<std::size_t>(far)], pts[static_cast<std::size_t>(u)])));
    if (n < 3 || spread <= 1e-12L)
      throw DegenerateInputError("Delaunay input points are collinear");
  }

  // Bowyer-Watson with an enclosing super triangle.
  pts[static_cast<std::size_t>(n)] = {0, 3 * kSuperScale};
  pts[static_cast<std::size_t>(n) + 1] = {-3 * kSuperScale, -3 * kSuperScale};
  pts[static_cast<std::size_t>(n) + 2] = {3 * kSuperScale, -3 * kSuperScale};
  std::vector<Face> tris{{n + 1, n + 2, n}};

  std::vector<char> bad;
  std::map<std::pair<int, int>, int> edge_count;
  std::vector<std::pair<int, int>> boundary;
  for (int u = 0; u < n; ++u) {
    const P2& p = pts[static_cast<std::size_t>(u)];
    bad.assign(tris.size(), 0);
    edge_count.clear();
    for (std::size_t t = 0; t < tris.size(); ++t) {
      const Face& f = tris[t];
      if (incircle(pts[static_cast<std::size_t>(f[0])], pts[static_cast<std::size_t>(f[1])],
                   pts[static_cast<std::size_t>(f[2])], p) > 0) {
        bad[t] = 1;
        for (int e = 0; e < 3; ++e) {
          const int a = f[static_cast<std::size_t>(e)], b = f[static_cast<std::size_t>((e + 1) % 3)];
          ++edge_count[{std::min(a, b), std::max(a, b)}];
        }
      }
    }
    boundary.clear();
    std::vector<Face> kept;
    kept.reserve(tris.size() + 2);
    for (std::size_t t = 0; t < tris.size(); ++t) {
      const Face& f = tris[t];
      if (!bad[t]) {
        kept.push_back(f);
        continue;
      }
      for (int e = 0; e < 3; ++e) {
        const int a = f[static_cast<std::size_t>(e)], b = f[static_cast<std::size_t>((e + 1) % 3)];
        if (edge_count[{std::min(a, b), std::max(a, b)}] == 1) boundary.emplace_back(a, b);
      }
    }
    for (const auto& [a, b] : boundary) kept.push_back({a, b, u});
    tris.swap(kept);
  }

  // Drop super-triangle faces and compact unreferenced vertices.
  std::vector<int> used(static_cast<std::size_t>(n), -1);
  std::vector<Face> faces;
  for (const Face& f : tris) {
    if (f[0] >= n || f[1] >= n || f[2] >= n) continue;
    Face g = f;
    if (orient(pts[static_cast<std::size_t>(g[0])], pts[static_cast<std::size_t>(g[1])],
               pts[static_cast<std::size_t>(g[2])]) < 0)
      std::swap(g[1], g[2]);
    faces.push_back(g);
    for (int v : g) used[static_cast<std::size_t>(v)] = 0;
  }
  Triangulation result;
  int next = 0;
  for (int u = 0; u < n; ++u)
    if (used[static_cast<std::size_t>(u)] == 0) used[static_cast<std::size_t>(u)] = next++;
  result.mesh.vertices.resize(next, 3);
  for (int u = 0; u < n; ++u)
    if (used[static_cast<std::size_t>(u)] >= 0)
      result.mesh.vertices.row(used[static_cast<std::size_t>(u)]) = points.row(unique_inputs[static_cast<std::size_t>(u)]);
  for (Face& f : faces)
    for (int& v : f) v = used[static_cast<std::size_t>(v)];
  result.mesh.faces = std::move(faces);
  result.vertex_of_input.resize(static_cast<std::size_t>(n_in));
  for (int i = 0; i < n_in; ++i)
    result.vertex_of_input[static_cast<std::size_t>(i)] = used[static_cast<std::size_t>(unique_of_input[static_cast<std::size_t>(i)])];
  if (result.mesh.faces.empty()) throw DegenerateInputError("Delaunay triangulation produced no faces");
  return result;
}

}  // namespace ndesc
