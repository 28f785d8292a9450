#include "blendrig/arap.h"
#include "blendrig/error.h"
#include "blendrig/rig.h"

#include <json.hpp>

#include <fstream>
#include <limits>

namespace blendrig {

namespace {

using nlohmann::json;

constexpr int kManifestVersion = 1;

std::string sanitize(const std::string& name) {
  std::string out;
  for (char c : name) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                    c == '_' || c == '-';
    out += ok ? c : '_';
  }
  return out;
}

}  // namespace

double propagateFill(BlendshapeRig& rig, int maxIterations, double tolerance) {
  rig.basisInterior.clear();
  if (!rig.hasFill()) {
    return std::numeric_limits<double>::infinity();
  }
  const AugmentedTopology topo = buildAugmentedTopology(rig.neutral, rig.fill);
  const Positions rest = combinedPositions(rig.neutral.vertices, rig.fill.interior);
  double minVolume = std::numeric_limits<double>::infinity();
  for (int j = 0; j < rig.basisCount(); ++j) {
    ArapProblem problem;
    problem.rest = rest;
    problem.targets = rig.blendshapePositions(j);
    problem.edges = topo.edges;
    problem.maxIterations = maxIterations;
    problem.tolerance = tolerance;
    ArapResult result = arapDeform(problem);
    const Positions deformed = combinedPositions(problem.targets, result.interior);
    for (Eigen::Index t = 0; t < rig.fill.tets.rows(); ++t) {
      const auto& tet = rig.fill.tets;
      minVolume = std::min(minVolume, tetSignedVolume(deformed.row(tet(t, 0)).transpose(),
                                                      deformed.row(tet(t, 1)).transpose(),
                                                      deformed.row(tet(t, 2)).transpose(),
                                                      deformed.row(tet(t, 3)).transpose()));
    }
    rig.basisInterior.push_back(std::move(result.interior));
  }
  return minVolume;
}

BlendshapeRig loadRig(const std::filesystem::path& manifestPath) {
  std::ifstream in(manifestPath);
  if (!in) {
    throw InputError("cannot open rig manifest " + manifestPath.string());
  }
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw InputError(manifestPath.string() + ": " + e.what());
  }
  const auto dir = manifestPath.parent_path();
  BlendshapeRig rig;
  try {
    if (doc.value("version", 0) != kManifestVersion) {
      throw InputError(manifestPath.string() + ": unsupported manifest version");
    }
    rig.neutral = loadObj(dir / doc.at("neutral").get<std::string>());
    const int n = rig.vertexCount();
    const auto& shapes = doc.at("blendshapes");
    rig.basis.resize(3 * static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(shapes.size()));
    for (size_t j = 0; j < shapes.size(); ++j) {
      rig.names.push_back(shapes[j].at("name").get<std::string>());
      const TriMesh mesh = loadObj(dir / shapes[j].at("mesh").get<std::string>());
      if (mesh.vertexCount() != n || mesh.faces != rig.neutral.faces) {
        throw InputError("blendshape '" + rig.names.back() + "' topology differs from the neutral");
      }
      const Positions disp = mesh.vertices - rig.neutral.vertices;
      rig.basis.col(static_cast<Eigen::Index>(j)) =
          Eigen::Map<const Eigen::VectorXd>(disp.data(), disp.size());
    }
    for (const auto& s : doc.value("symmetry", json::array())) {
      rig.symmetry.push_back({s.at(0).get<int>(), s.at(1).get<int>()});
    }
    if (doc.contains("vertex_mirror_map")) {
      rig.mirrorMap = doc.at("vertex_mirror_map").get<std::vector<int>>();
    } else if (!rig.symmetry.empty()) {
      rig.mirrorMap = computeMirrorMap(rig.neutral.vertices);
    }
    for (const auto& a : doc.value("landmarks", json::array())) {
      LandmarkAnchor anchor;
      anchor.face = a.at("face").get<int>();
      const auto b = a.at("barycentric").get<std::vector<double>>();
      if (b.size() != 3) {
        throw InputError("landmark barycentric must have 3 entries");
      }
      anchor.barycentric = Eigen::Vector3d(b[0], b[1], b[2]);
      rig.landmarks.push_back(anchor);
    }
    if (doc.contains("tet_fill")) {
      const auto& fill = doc.at("tet_fill");
      rig.fill = loadTetFill(dir / fill.at("node").get<std::string>(),
                             dir / fill.at("ele").get<std::string>(), rig.neutral);
    }
  } catch (const json::exception& e) {
    throw InputError(manifestPath.string() + ": " + e.what());
  }
  rig.validate();
  propagateFill(rig);
  return rig;
}

void saveRig(const BlendshapeRig& rig, const std::filesystem::path& directory) {
  rig.validate();
  std::filesystem::create_directories(directory);
  json doc;
  doc["version"] = kManifestVersion;
  doc["neutral"] = "neutral.obj";
  saveObj(rig.neutral, directory / "neutral.obj");
  json shapes = json::array();
  for (int j = 0; j < rig.basisCount(); ++j) {
    const std::string file = "bs_" + std::to_string(j) + "_" + sanitize(rig.names[static_cast<size_t>(j)]) + ".obj";
    TriMesh mesh{rig.blendshapePositions(j), rig.neutral.faces};
    saveObj(mesh, directory / file);
    shapes.push_back({{"name", rig.names[static_cast<size_t>(j)]}, {"mesh", file}});
  }
  doc["blendshapes"] = shapes;
  json sym = json::array();
  for (const auto& s : rig.symmetry) {
    sym.push_back({s.left, s.right});
  }
  doc["symmetry"] = sym;
  if (!rig.mirrorMap.empty()) {
    doc["vertex_mirror_map"] = rig.mirrorMap;
  }
  json anchors = json::array();
  for (const auto& a : rig.landmarks) {
    anchors.push_back({{"face", a.face},
                       {"barycentric", {a.barycentric.x(), a.barycentric.y(), a.barycentric.z()}}});
  }
  doc["landmarks"] = anchors;
  if (rig.hasFill()) {
    saveTetFill(rig.neutral, rig.fill, directory / "fill.node", directory / "fill.ele");
    doc["tet_fill"] = {{"node", "fill.node"}, {"ele", "fill.ele"}};
  }
  std::ofstream out(directory / "manifest.json");
  if (!out) {
    throw InputError("cannot write manifest in " + directory.string());
  }
  out << doc.dump(2) << '\n';
}

}  // namespace blendrig
