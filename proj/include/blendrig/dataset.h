#pragma once

#include "blendrig/camera.h"
#include "blendrig/image.h"
#include "blendrig/sync.h"

#include <filesystem>
#include <string>
#include <vector>

namespace blendrig {

struct FrameRecord {
  int index = 0;
  double time = 0.0;  // seconds, from the view clock
  Image image;        // RGB; may be empty for landmark-only data
  Image mask;         // single channel in {0, 1}
  LandmarkObservation landmarks;
};

struct ViewData {
  std::string name;
  Camera camera;
  FrameClock clock;
  std::vector<FrameRecord> frames;
};

struct Dataset {
  std::vector<ViewData> views;
  TimeNormalizer normalizer;

  int frameCount() const;
  // Sets the normalizer to span the earliest and latest frame time.
  void fitNormalizer();
  void validate(int landmarkCount, bool needImages) const;
};

// On-disk project:
//   <root>/config.json
//   <root>/rig/manifest.json        (overridable with the rig_manifest key)
//   <root>/views/<name>/camera.txt
//   <root>/views/<name>/clock.txt    "start_seconds frames_per_second"
//   <root>/views/<name>/frames/<index>.png
//   <root>/views/<name>/masks/<index>.png
//   <root>/views/<name>/landmarks/<index>.txt
//   <root>/scan.ply                  (optional)
//   <root>/out/
struct ProjectLayout {
  std::filesystem::path root;
  std::filesystem::path config;
  std::filesystem::path rigManifest;
  std::filesystem::path viewsDir;
  std::filesystem::path scan;  // empty when absent
  std::filesystem::path out;
  std::vector<std::string> viewNames;

  static ProjectLayout discover(const std::filesystem::path& root);
};

FrameClock loadClock(const std::filesystem::path& path);
void saveClock(const FrameClock& clock, const std::filesystem::path& path);

// Frame file name for an index ("000012").
std::string frameStem(int index);

// Loads the selected views (all when `views` is empty). Images and masks are
// resampled to width x height; intrinsics and landmarks are rescaled to match.
Dataset loadDataset(const ProjectLayout& layout,
                    int landmarkCount,
                    int width,
                    int height,
                    const std::vector<std::string>& views = {});

// Camera intrinsics scaled to a new image size.
Camera rescaleCamera(const Camera& camera, int width, int height);

}  // namespace blendrig
