#include "blendrig/mesh.h"

#include "blendrig/error.h"

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>

namespace blendrig {

namespace {

// Strips a trailing comment and surrounding whitespace.
std::string stripComment(const std::string& line) {
  const auto hash = line.find('#');
  std::string out = hash == std::string::npos ? line : line.substr(0, hash);
  const auto first = out.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) {
    return {};
  }
  const auto last = out.find_last_not_of(" \t\r\n");
  return out.substr(first, last - first + 1);
}

// Parses the vertex index from an OBJ face token ("7", "7/2", "7//3", "-1").
int parseObjIndex(const std::string& token, int vertexCount, int lineNo) {
  const auto slash = token.find('/');
  const std::string head = token.substr(0, slash);
  int value = 0;
  const auto* begin = head.data();
  const auto* end = head.data() + head.size();
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end || value == 0) {
    throw InputError(detail::concat("OBJ line ", lineNo, ": bad face index '", token, "'"));
  }
  return value > 0 ? value - 1 : vertexCount + value;
}

std::vector<std::string> dataLines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw InputError("cannot open " + path.string());
  }
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    line = stripComment(line);
    if (!line.empty()) {
      lines.push_back(std::move(line));
    }
  }
  return lines;
}

void addEdge(std::vector<std::pair<int, int>>& edges, int a, int b) {
  edges.emplace_back(std::min(a, b), std::max(a, b));
}

void sortUnique(std::vector<std::pair<int, int>>& edges) {
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
}

}  // namespace

void TriMesh::validate() const {
  const int n = vertexCount();
  if (!vertices.allFinite()) {
    throw InputError("mesh has non-finite vertex positions");
  }
  for (int f = 0; f < faceCount(); ++f) {
    const int a = faces(f, 0), b = faces(f, 1), c = faces(f, 2);
    if (a < 0 || b < 0 || c < 0 || a >= n || b >= n || c >= n) {
      throw InputError(detail::concat("face ", f, " index out of range [0, ", n, ")"));
    }
    if (a == b || b == c || a == c) {
      throw InputError(detail::concat("face ", f, " is degenerate"));
    }
  }
}

TriMesh loadObj(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw InputError("cannot open OBJ " + path.string());
  }
  std::vector<Eigen::Vector3d> verts;
  std::vector<Eigen::Vector3i> faces;
  std::string line;
  int lineNo = 0;
  while (std::getline(in, line)) {
    ++lineNo;
    line = stripComment(line);
    if (line.empty()) {
      continue;
    }
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "v") {
      Eigen::Vector3d p;
      if (!(ls >> p.x() >> p.y() >> p.z())) {
        throw InputError(detail::concat(path.string(), ":", lineNo, ": malformed vertex"));
      }
      verts.push_back(p);
    } else if (tag == "f") {
      std::vector<int> poly;
      std::string tok;
      while (ls >> tok) {
        poly.push_back(parseObjIndex(tok, static_cast<int>(verts.size()), lineNo));
      }
      if (poly.size() < 3) {
        throw InputError(detail::concat(path.string(), ":", lineNo, ": face with fewer than 3 vertices"));
      }
      for (size_t k = 1; k + 1 < poly.size(); ++k) {
        faces.emplace_back(poly[0], poly[k], poly[k + 1]);
      }
    }
  }
  if (verts.size() < 3) {
    throw InputError(path.string() + ": fewer than 3 vertices");
  }
  TriMesh mesh;
  mesh.vertices.resize(static_cast<Eigen::Index>(verts.size()), 3);
  for (size_t i = 0; i < verts.size(); ++i) {
    mesh.vertices.row(static_cast<Eigen::Index>(i)) = verts[i].transpose();
  }
  mesh.faces.resize(static_cast<Eigen::Index>(faces.size()), 3);
  for (size_t i = 0; i < faces.size(); ++i) {
    mesh.faces.row(static_cast<Eigen::Index>(i)) = faces[i].transpose();
  }
  mesh.validate();
  return mesh;
}

void saveObj(const TriMesh& mesh, const std::filesystem::path& path) {
  if (mesh.vertexCount() == 0) {
    throw InputError("refusing to write an empty mesh to " + path.string());
  }
  mesh.validate();
  std::ofstream out(path);
  if (!out) {
    throw InputError("cannot write " + path.string());
  }
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (int i = 0; i < mesh.vertexCount(); ++i) {
    out << "v " << mesh.vertices(i, 0) << ' ' << mesh.vertices(i, 1) << ' ' << mesh.vertices(i, 2)
        << '\n';
  }
  for (int f = 0; f < mesh.faceCount(); ++f) {
    out << "f " << mesh.faces(f, 0) + 1 << ' ' << mesh.faces(f, 1) + 1 << ' '
        << mesh.faces(f, 2) + 1 << '\n';
  }
  if (!out) {
    throw InputError("write failed: " + path.string());
  }
}

double tetSignedVolume(const Eigen::Vector3d& p0,
                       const Eigen::Vector3d& p1,
                       const Eigen::Vector3d& p2,
                       const Eigen::Vector3d& p3) {
  Eigen::Matrix3d m;
  m.col(0) = p1 - p0;
  m.col(1) = p2 - p0;
  m.col(2) = p3 - p0;
  return m.determinant() / 6.0;
}

Positions combinedPositions(const Positions& surface, const Positions& interior) {
  Positions all(surface.rows() + interior.rows(), 3);
  all.topRows(surface.rows()) = surface;
  all.bottomRows(interior.rows()) = interior;
  return all;
}

void validateTetOrientation(const Positions& combined, const Tets& tets) {
  for (Eigen::Index t = 0; t < tets.rows(); ++t) {
    const double vol = tetSignedVolume(combined.row(tets(t, 0)).transpose(),
                                       combined.row(tets(t, 1)).transpose(),
                                       combined.row(tets(t, 2)).transpose(),
                                       combined.row(tets(t, 3)).transpose());
    if (!(vol > 0.0)) {
      throw InputError(detail::concat("tet ", t, " is inverted or flat (signed volume ", vol, ")"));
    }
  }
}

TetTopology loadTetFill(const std::filesystem::path& nodePath,
                        const std::filesystem::path& elePath,
                        const TriMesh& surface,
                        double tolerance) {
  const auto nodeLines = dataLines(nodePath);
  if (nodeLines.empty()) {
    throw InputError(nodePath.string() + ": empty node file");
  }
  long nodeCount = 0;
  int dim = 0;
  {
    std::istringstream hs(nodeLines[0]);
    if (!(hs >> nodeCount >> dim) || dim != 3 || nodeCount < 0) {
      throw InputError(nodePath.string() + ": malformed header");
    }
  }
  if (static_cast<long>(nodeLines.size()) - 1 < nodeCount) {
    throw InputError(nodePath.string() + ": fewer node records than declared");
  }
  const int n = surface.vertexCount();
  if (nodeCount < n) {
    throw InputError(detail::concat(nodePath.string(), ": ", nodeCount,
                                    " nodes but surface has ", n, " vertices"));
  }
  Positions nodes(nodeCount, 3);
  int base = 0;
  for (long i = 0; i < nodeCount; ++i) {
    std::istringstream ls(nodeLines[static_cast<size_t>(i) + 1]);
    long idx = 0;
    double x = 0, y = 0, z = 0;
    if (!(ls >> idx >> x >> y >> z)) {
      throw InputError(detail::concat(nodePath.string(), ": malformed node record ", i));
    }
    if (i == 0) {
      base = static_cast<int>(idx);
      if (base != 0 && base != 1) {
        throw InputError(nodePath.string() + ": node indices must start at 0 or 1");
      }
    }
    if (idx != i + base) {
      throw InputError(detail::concat(nodePath.string(), ": node ", idx, " out of sequence"));
    }
    nodes.row(i) << x, y, z;
  }
  for (int i = 0; i < n; ++i) {
    const double d = (nodes.row(i) - surface.vertices.row(i)).norm();
    if (!(d <= tolerance)) {
      throw InputError(detail::concat("tet node ", i, " is ", d,
                                      " away from surface vertex (tolerance ", tolerance, ")"));
    }
  }

  const auto eleLines = dataLines(elePath);
  if (eleLines.empty()) {
    throw InputError(elePath.string() + ": empty ele file");
  }
  long tetCount = 0;
  int perTet = 0;
  {
    std::istringstream hs(eleLines[0]);
    if (!(hs >> tetCount >> perTet) || perTet != 4 || tetCount < 0) {
      throw InputError(elePath.string() + ": malformed header (only 4-node tets supported)");
    }
  }
  if (static_cast<long>(eleLines.size()) - 1 < tetCount) {
    throw InputError(elePath.string() + ": fewer tet records than declared");
  }
  TetTopology fill;
  fill.interior = nodes.bottomRows(nodeCount - n);
  fill.tets.resize(tetCount, 4);
  for (long t = 0; t < tetCount; ++t) {
    std::istringstream ls(eleLines[static_cast<size_t>(t) + 1]);
    long idx = 0;
    long v[4];
    if (!(ls >> idx >> v[0] >> v[1] >> v[2] >> v[3])) {
      throw InputError(detail::concat(elePath.string(), ": malformed tet record ", t));
    }
    for (int k = 0; k < 4; ++k) {
      const long local = v[k] - base;
      if (local < 0 || local >= nodeCount) {
        throw InputError(detail::concat(elePath.string(), ": tet ", t, " references node ", v[k],
                                        " outside [", base, ", ", nodeCount + base, ")"));
      }
      fill.tets(t, k) = static_cast<int>(local);
    }
    const auto row = fill.tets.row(t);
    for (int a = 0; a < 4; ++a) {
      for (int b = a + 1; b < 4; ++b) {
        if (row(a) == row(b)) {
          throw InputError(detail::concat(elePath.string(), ": tet ", t, " has repeated nodes"));
        }
      }
    }
  }
  validateTetOrientation(nodes, fill.tets);
  return fill;
}

void saveTetFill(const TriMesh& surface,
                 const TetTopology& fill,
                 const std::filesystem::path& nodePath,
                 const std::filesystem::path& elePath) {
  const Positions all = combinedPositions(surface.vertices, fill.interior);
  std::ofstream node(nodePath);
  std::ofstream ele(elePath);
  if (!node || !ele) {
    throw InputError("cannot write tet fill next to " + nodePath.string());
  }
  node << std::setprecision(std::numeric_limits<double>::max_digits10);
  node << all.rows() << " 3 0 0\n";
  for (Eigen::Index i = 0; i < all.rows(); ++i) {
    node << i << ' ' << all(i, 0) << ' ' << all(i, 1) << ' ' << all(i, 2) << '\n';
  }
  ele << fill.tets.rows() << " 4 0\n";
  for (Eigen::Index t = 0; t < fill.tets.rows(); ++t) {
    ele << t << ' ' << fill.tets(t, 0) << ' ' << fill.tets(t, 1) << ' ' << fill.tets(t, 2) << ' '
        << fill.tets(t, 3) << '\n';
  }
}

AugmentedTopology buildSurfaceTopology(const TriMesh& surface) {
  AugmentedTopology topo;
  topo.vertexCount = surface.vertexCount();
  topo.surfaceVertexCount = surface.vertexCount();
  topo.edges.reserve(static_cast<size_t>(surface.faceCount()) * 3);
  for (int f = 0; f < surface.faceCount(); ++f) {
    for (int k = 0; k < 3; ++k) {
      addEdge(topo.edges, surface.faces(f, k), surface.faces(f, (k + 1) % 3));
    }
  }
  sortUnique(topo.edges);
  return topo;
}

AugmentedTopology buildAugmentedTopology(const TriMesh& surface, const TetTopology& fill) {
  surface.validate();
  AugmentedTopology topo = buildSurfaceTopology(surface);
  topo.vertexCount = surface.vertexCount() + fill.interiorCount();
  for (Eigen::Index t = 0; t < fill.tets.rows(); ++t) {
    for (int a = 0; a < 4; ++a) {
      const int va = fill.tets(t, a);
      if (va < 0 || va >= topo.vertexCount) {
        throw InputError(detail::concat("tet ", t, " index out of range"));
      }
      for (int b = a + 1; b < 4; ++b) {
        addEdge(topo.edges, va, fill.tets(t, b));
      }
    }
  }
  sortUnique(topo.edges);
  return topo;
}

SparseOperator buildCombinatorialLaplacian(const AugmentedTopology& topo) {
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(topo.edges.size() * 4);
  std::vector<double> degree(static_cast<size_t>(topo.vertexCount), 0.0);
  for (const auto& [a, b] : topo.edges) {
    triplets.emplace_back(a, b, -1.0);
    triplets.emplace_back(b, a, -1.0);
    degree[static_cast<size_t>(a)] += 1.0;
    degree[static_cast<size_t>(b)] += 1.0;
  }
  for (int i = 0; i < topo.vertexCount; ++i) {
    triplets.emplace_back(i, i, degree[static_cast<size_t>(i)]);
  }
  SparseOperator lap(topo.vertexCount, topo.vertexCount);
  lap.setFromTriplets(triplets.begin(), triplets.end());
  lap.makeCompressed();
  return lap;
}

}  // namespace blendrig
