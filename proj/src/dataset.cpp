#include "blendrig/dataset.h"

#include "blendrig/error.h"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <limits>

namespace blendrig {

namespace fs = std::filesystem;

int Dataset::frameCount() const {
  int n = 0;
  for (const auto& v : views) {
    n += static_cast<int>(v.frames.size());
  }
  return n;
}

void Dataset::fitNormalizer() {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& v : views) {
    for (const auto& f : v.frames) {
      lo = std::min(lo, f.time);
      hi = std::max(hi, f.time);
    }
  }
  if (!(lo <= hi)) {
    throw InputError("dataset has no frames");
  }
  normalizer.minTime = lo;
  normalizer.maxTime = hi;
}

void Dataset::validate(int landmarkCount, bool needImages) const {
  if (views.empty()) {
    throw InputError("dataset has no views");
  }
  for (size_t k = 0; k < views.size(); ++k) {
    const auto& v = views[k];
    v.camera.validate();
    if (v.camera.view != static_cast<int>(k)) {
      throw InputError("view '" + v.name + "' has an inconsistent camera index");
    }
    if (!(v.clock.frameRate > 0.0)) {
      throw InputError("view '" + v.name + "' has a non-positive frame rate");
    }
    for (const auto& f : v.frames) {
      if (f.landmarks.points.rows() != landmarkCount) {
        throw InputError(detail::concat("view '", v.name, "' frame ", f.index, ": expected ", landmarkCount,
                                        " landmarks"));
      }
      if (needImages && (f.image.width != v.camera.width || f.image.height != v.camera.height ||
                         f.mask.width != v.camera.width || f.mask.height != v.camera.height)) {
        throw InputError(detail::concat("view '", v.name, "' frame ", f.index, ": image size mismatch"));
      }
    }
  }
}

ProjectLayout ProjectLayout::discover(const fs::path& root) {
  if (!fs::is_directory(root)) {
    throw InputError("project directory " + root.string() + " does not exist");
  }
  ProjectLayout l;
  l.root = root;
  l.config = root / "config.json";
  l.rigManifest = root / "rig" / "manifest.json";
  l.viewsDir = root / "views";
  l.out = root / "out";
  if (fs::exists(root / "scan.ply")) {
    l.scan = root / "scan.ply";
  }
  if (fs::exists(l.config)) {
    std::ifstream in(l.config);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw InputError(l.config.string() + ": " + e.what());
    }
    if (j.contains("rig_manifest")) {
      l.rigManifest = root / j.at("rig_manifest").get<std::string>();
    }
    if (j.contains("views_dir")) {
      l.viewsDir = root / j.at("views_dir").get<std::string>();
    }
    if (j.contains("scan")) {
      l.scan = root / j.at("scan").get<std::string>();
    }
  }
  if (!fs::is_directory(l.viewsDir)) {
    throw InputError("no views directory at " + l.viewsDir.string());
  }
  for (const auto& entry : fs::directory_iterator(l.viewsDir)) {
    if (entry.is_directory()) {
      l.viewNames.push_back(entry.path().filename().string());
    }
  }
  std::sort(l.viewNames.begin(), l.viewNames.end());
  if (l.viewNames.empty()) {
    throw InputError("no view folders in " + l.viewsDir.string());
  }
  return l;
}

FrameClock loadClock(const fs::path& path) {
  std::ifstream in(path);
  FrameClock c;
  if (!(in >> c.startTime >> c.frameRate)) {
    throw InputError("cannot read clock " + path.string());
  }
  if (!(c.frameRate > 0.0)) {
    throw InputError(path.string() + ": frame rate must be positive");
  }
  return c;
}

void saveClock(const FrameClock& clock, const fs::path& path) {
  std::ofstream out(path);
  out.precision(std::numeric_limits<double>::max_digits10);
  out << clock.startTime << ' ' << clock.frameRate << '\n';
  if (!out) {
    throw InputError("cannot write " + path.string());
  }
}

std::string frameStem(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06d", index);
  return buf;
}

Camera rescaleCamera(const Camera& camera, int width, int height) {
  Camera c = camera;
  const double sx = static_cast<double>(width) / camera.width;
  const double sy = static_cast<double>(height) / camera.height;
  c.fx *= sx;
  c.cx *= sx;
  c.fy *= sy;
  c.cy *= sy;
  c.width = width;
  c.height = height;
  return c;
}

Dataset loadDataset(const ProjectLayout& layout,
                    int landmarkCount,
                    int width,
                    int height,
                    const std::vector<std::string>& views) {
  std::vector<std::string> names = views.empty() ? layout.viewNames : views;
  Dataset data;
  for (const auto& name : names) {
    if (std::find(layout.viewNames.begin(), layout.viewNames.end(), name) == layout.viewNames.end()) {
      throw InputError("unknown view '" + name + "'");
    }
    const fs::path dir = layout.viewsDir / name;
    ViewData view;
    view.name = name;
    const Camera original = loadCamera(dir / "camera.txt");
    view.camera = rescaleCamera(original, width, height);
    view.camera.view = static_cast<int>(data.views.size());
    view.clock = loadClock(dir / "clock.txt");
    std::vector<std::pair<int, std::string>> indices;
    for (const auto& entry : fs::directory_iterator(dir / "frames")) {
      if (entry.path().extension() != ".png") {
        continue;
      }
      try {
        const std::string stem = entry.path().stem().string();
        indices.emplace_back(std::stoi(stem), stem);
      } catch (const std::exception&) {
        throw InputError("frame file name is not an index: " + entry.path().string());
      }
    }
    std::sort(indices.begin(), indices.end());
    const double sx = static_cast<double>(width) / original.width;
    const double sy = static_cast<double>(height) / original.height;
    for (const auto& [index, stem] : indices) {
      FrameRecord f;
      f.index = index;
      f.time = frameTime(view.clock, index);
      f.image = resample(loadPng(dir / "frames" / (stem + ".png"), 3), width, height);
      const Image mask = resample(loadMask(dir / "masks" / (stem + ".png")), width, height);
      f.mask = mask;
      for (auto& m : f.mask.data) {
        m = m >= 0.5 ? 1.0 : 0.0;
      }
      f.landmarks = loadLandmarks(dir / "landmarks" / (stem + ".txt"), landmarkCount);
      f.landmarks.points.col(0) *= sx;
      f.landmarks.points.col(1) *= sy;
      view.frames.push_back(std::move(f));
    }
    if (view.frames.empty()) {
      throw InputError("view '" + name + "' has no frames");
    }
    data.views.push_back(std::move(view));
  }
  data.fitNormalizer();
  data.validate(landmarkCount, true);
  return data;
}

}  // namespace blendrig
