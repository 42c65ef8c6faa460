#include <algorithm>
#include <fstream>
#include <map>
#include <queue>
#include <sstream>

#include "ndesc/errors.hpp"
#include "ndesc/geomcore.hpp"

namespace ndesc {

void TriMesh::validate() const {
  const auto n = static_cast<int>(vertices.rows());
  if (!vertices.allFinite()) throw DegenerateInputError("mesh has non-finite vertex coordinates");
  for (std::size_t f = 0; f < faces.size(); ++f) {
    const Face& t = faces[f];
    for (int v : t)
      if (v < 0 || v >= n)
        throw TopologyError("face " + std::to_string(f) + " references vertex " +
                            std::to_string(v) + " outside [0, " + std::to_string(n) + ")");
    if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2])
      throw TopologyError("face " + std::to_string(f) + " repeats a vertex");
  }
}

std::vector<std::array<int, 2>> mesh_edges(const TriMesh& mesh) {
  std::vector<std::array<int, 2>> edges;
  edges.reserve(mesh.faces.size() * 3);
  for (const Face& f : mesh.faces)
    for (int c = 0; c < 3; ++c) {
      const int a = f[static_cast<std::size_t>(c)];
      const int b = f[static_cast<std::size_t>((c + 1) % 3)];
      edges.push_back({std::min(a, b), std::max(a, b)});
    }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  return edges;
}

double mesh_area(const TriMesh& mesh) {
  double area = 0.0;
  for (const Face& f : mesh.faces) {
    const Eigen::Vector3d a = mesh.vertices.row(f[0]).transpose();
    const Eigen::Vector3d b = mesh.vertices.row(f[1]).transpose();
    const Eigen::Vector3d c = mesh.vertices.row(f[2]).transpose();
    area += 0.5 * (b - a).cross(c - a).norm();
  }
  return area;
}

TriMesh normalize_mesh(const TriMesh& mesh) {
  const double area = mesh_area(mesh);
  if (!(area > 0.0) || !std::isfinite(area))
    throw DegenerateInputError("cannot normalise a mesh with zero area");
  TriMesh out = mesh;
  out.vertices /= std::sqrt(area);
  return out;
}

TriMesh make_icosphere(int subdivisions) {
  if (subdivisions < 0) throw ConfigError("icosphere subdivisions must be non-negative");
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Eigen::Vector3d> verts = {
      {-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
      {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  for (auto& v : verts) v.normalize();
  std::vector<Face> faces = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                             {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                             {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                             {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<int, int>, int> midpoint;
    auto mid = [&](int a, int b) {
      const std::pair<int, int> key{std::min(a, b), std::max(a, b)};
      auto it = midpoint.find(key);
      if (it != midpoint.end()) return it->second;
      verts.push_back((verts[static_cast<std::size_t>(a)] + verts[static_cast<std::size_t>(b)]).normalized());
      const int id = static_cast<int>(verts.size()) - 1;
      midpoint.emplace(key, id);
      return id;
    };
    std::vector<Face> next;
    next.reserve(faces.size() * 4);
    for (const Face& f : faces) {
      const int ab = mid(f[0], f[1]);
      const int bc = mid(f[1], f[2]);
      const int ca = mid(f[2], f[0]);
      next.push_back({f[0], ab, ca});
      next.push_back({f[1], bc, ab});
      next.push_back({f[2], ca, bc});
      next.push_back({ab, bc, ca});
    }
    faces.swap(next);
  }
  TriMesh mesh;
  mesh.vertices.resize(static_cast<Eigen::Index>(verts.size()), 3);
  for (std::size_t i = 0; i < verts.size(); ++i)
    mesh.vertices.row(static_cast<Eigen::Index>(i)) = verts[i].transpose();
  mesh.faces = std::move(faces);
  return mesh;
}

GeodesicField geodesic_distances(const TriMesh& mesh, std::size_t source_vertex) {
  mesh.validate();
  const std::size_t n = mesh.vertex_count();
  if (source_vertex >= n) throw ConfigError("geodesic source vertex out of range");

  std::vector<std::vector<std::pair<int, double>>> adjacency(n);
  for (const auto& [a, b] : mesh_edges(mesh)) {
    const double len = (mesh.vertices.row(a) - mesh.vertices.row(b)).norm();
    adjacency[static_cast<std::size_t>(a)].emplace_back(b, len);
    adjacency[static_cast<std::size_t>(b)].emplace_back(a, len);
  }

  GeodesicField field;
  field.distance = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(n),
                                             std::numeric_limits<double>::infinity());
  using Entry = std::pair<double, int>;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> queue;
  field.distance[static_cast<Eigen::Index>(source_vertex)] = 0.0;
  queue.emplace(0.0, static_cast<int>(source_vertex));
  while (!queue.empty()) {
    const auto [d, u] = queue.top();
    queue.pop();
    if (d > field.distance[u]) continue;
    for (const auto& [v, len] : adjacency[static_cast<std::size_t>(u)]) {
      const double nd = d + len;
      if (nd < field.distance[v]) {
        field.distance[v] = nd;
        queue.emplace(nd, v);
      }
    }
  }
  field.unreachable = static_cast<std::size_t>(
      (field.distance.array() == std::numeric_limits<double>::infinity()).count());
  return field;
}

// ---------------------------------------------------------------------------

namespace {

// Next non-empty, non-comment line split into tokens.
bool next_tokens(std::istream& in, std::vector<std::string>& tokens) {
  std::string line;
  while (std::getline(in, line)) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ss(line);
    tokens.clear();
    for (std::string tok; ss >> tok;) tokens.push_back(tok);
    if (!tokens.empty()) return true;
  }
  return false;
}

double to_double(const std::string& s, const std::filesystem::path& path) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw IoError(path.string() + ": bad number '" + s + "'");
  }
}

long to_long(const std::string& s, const std::filesystem::path& path) {
  try {
    std::size_t used = 0;
    const long v = std::stol(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw IoError(path.string() + ": bad integer '" + s + "'");
  }
}

void read_polygons(std::istream& in, long count, TriMesh& mesh, const std::filesystem::path& path) {
  std::vector<std::string> tok;
  for (long f = 0; f < count; ++f) {
    if (!next_tokens(in, tok)) throw IoError(path.string() + ": truncated face list");
    const long nv = to_long(tok[0], path);
    if (nv < 3 || static_cast<long>(tok.size()) < nv + 1)
      throw IoError(path.string() + ": malformed face " + std::to_string(f));
    // Fan-triangulate polygons.
    const int v0 = static_cast<int>(to_long(tok[1], path));
    for (long j = 2; j < nv; ++j)
      mesh.faces.push_back({v0, static_cast<int>(to_long(tok[static_cast<std::size_t>(j)], path)),
                            static_cast<int>(to_long(tok[static_cast<std::size_t>(j + 1)], path))});
  }
}

}  // namespace

TriMesh read_off(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::string> tok;
  if (!next_tokens(in, tok) || tok[0].rfind("OFF", 0) != 0)
    throw IoError(path.string() + ": missing OFF header");
  std::vector<std::string> counts(tok.begin() + 1, tok.end());
  if (counts.empty()) {
    if (!next_tokens(in, tok)) throw IoError(path.string() + ": missing OFF counts");
    counts = tok;
  }
  if (counts.size() < 2) throw IoError(path.string() + ": malformed OFF counts");
  const long nv = to_long(counts[0], path);
  const long nf = to_long(counts[1], path);
  if (nv < 0 || nf < 0) throw IoError(path.string() + ": negative element count");
  TriMesh mesh;
  mesh.vertices.resize(nv, 3);
  for (long i = 0; i < nv; ++i) {
    if (!next_tokens(in, tok) || tok.size() < 3)
      throw IoError(path.string() + ": truncated vertex list at vertex " + std::to_string(i));
    for (int c = 0; c < 3; ++c) mesh.vertices(i, c) = to_double(tok[static_cast<std::size_t>(c)], path);
  }
  read_polygons(in, nf, mesh, path);
  mesh.validate();
  return mesh;
}

TriMesh read_ply(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::string> tok;
  if (!next_tokens(in, tok) || tok[0] != "ply") throw IoError(path.string() + ": missing ply magic");
  long nv = -1;
  long nf = -1;
  int vertex_props = 0;
  int x_col = -1, y_col = -1, z_col = -1;
  std::string current;
  while (true) {
    // PLY comments start with the keyword, not '#'.
    std::string line;
    if (!std::getline(in, line)) throw IoError(path.string() + ": missing end_header");
    std::istringstream ss(line);
    tok.clear();
    for (std::string t; ss >> t;) tok.push_back(t);
    if (tok.empty() || tok[0] == "comment" || tok[0] == "obj_info") continue;
    if (tok[0] == "format") {
      if (tok.size() < 2 || tok[1] != "ascii")
        throw IoError(path.string() + ": only ASCII PLY is supported");
    } else if (tok[0] == "element" && tok.size() >= 3) {
      current = tok[1];
      if (current == "vertex") nv = to_long(tok[2], path);
      else if (current == "face") nf = to_long(tok[2], path);
      else throw IoError(path.string() + ": unsupported element '" + current + "'");
    } else if (tok[0] == "property") {
      if (current == "vertex") {
        const std::string& name = tok.back();
        if (name == "x") x_col = vertex_props;
        if (name == "y") y_col = vertex_props;
        if (name == "z") z_col = vertex_props;
        ++vertex_props;
      }
    } else if (tok[0] == "end_header") {
      break;
    }
  }
  if (nv < 0 || nf < 0 || x_col < 0 || y_col < 0 || z_col < 0)
    throw IoError(path.string() + ": PLY header lacks vertex positions or faces");
  TriMesh mesh;
  mesh.vertices.resize(nv, 3);
  for (long i = 0; i < nv; ++i) {
    if (!next_tokens(in, tok) || static_cast<int>(tok.size()) < vertex_props)
      throw IoError(path.string() + ": truncated vertex list at vertex " + std::to_string(i));
    mesh.vertices(i, 0) = to_double(tok[static_cast<std::size_t>(x_col)], path);
    mesh.vertices(i, 1) = to_double(tok[static_cast<std::size_t>(y_col)], path);
    mesh.vertices(i, 2) = to_double(tok[static_cast<std::size_t>(z_col)], path);
  }
  read_polygons(in, nf, mesh, path);
  mesh.validate();
  return mesh;
}

TriMesh read_mesh(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".off") return read_off(path);
  if (ext == ".ply") return read_ply(path);
  throw IoError(path.string() + ": unsupported mesh extension '" + ext + "'");
}

void write_off(const TriMesh& mesh, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "OFF\n" << mesh.vertex_count() << ' ' << mesh.face_count() << " 0\n";
  out.precision(17);
  for (Eigen::Index i = 0; i < mesh.vertices.rows(); ++i)
    out << mesh.vertices(i, 0) << ' ' << mesh.vertices(i, 1) << ' ' << mesh.vertices(i, 2) << '\n';
  for (const Face& f : mesh.faces) out << "3 " << f[0] << ' ' << f[1] << ' ' << f[2] << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace ndesc
