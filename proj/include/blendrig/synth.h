#pragma once

#include "blendrig/camera.h"
#include "blendrig/eval.h"
#include "blendrig/image.h"
#include "blendrig/rig.h"
#include "blendrig/sync.h"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace blendrig {

// Procedural head proxy: a mirror-exact ellipsoid (about x = 0) with nose,
// brow and chin relief, a tet-filled mouth block, 38 landmark anchors and eight
// blendshapes (jawOpen, smileL, smileR, browRaise, cheekPuff, eyeCloseL,
// eyeCloseR, mouthLeft). "Left" is +x. Units are meters, face towards +z.
BlendshapeRig makeHeadTemplate(int rings = 48, int segments = 52);

// Faces of the mouth patch of the template neutral.
std::vector<int> mouthPatchFaces(const TriMesh& templateSurface);

// Tet fill under the mouth: every patch vertex gets an interior copy `depth`
// meters inward along its normal and each patch triangle becomes a prism split
// into three positively oriented tets. Shared prism sides are split along the
// same diagonal, so the fill is conforming.
TetTopology makeMouthFill(const TriMesh& surface, const std::vector<int>& patchFaces, double depth = 0.010);

// Ground-truth personalization: seeded anisotropic scale plus smooth symmetric
// relief on the neutral, and extra smooth displacement on jawOpen and cheekPuff.
// Every other blendshape keeps its template displacement.
BlendshapeRig makeGroundTruthRig(const BlendshapeRig& templ, std::uint64_t seed);

// Facial region used for scoring: vertices on the front half (z > 0) of the
// template neutral.
std::vector<bool> facialRegion(const BlendshapeRig& templ);

// Smooth seeded head motion and expression trajectory.
struct MotionTrajectory {
  std::uint64_t seed = 1;
  int basisCount = 8;
  double yawDegrees = 15.0;
  double pitchDegrees = 8.0;
  double rollDegrees = 4.0;
  Eigen::Vector3d translationAmplitude = Eigen::Vector3d(0.008, 0.006, 0.010);

  MotionParameters at(double seconds) const;
};

// Camera k of `views`, on a 0.5 m ring around the head, looking at the origin.
Camera makeFixtureCamera(int k, int views, int resolution);

// Camera at `center` looking at `target` (image y down, world y up).
Camera lookAtCamera(const Eigen::Vector3d& center,
                    const Eigen::Vector3d& target,
                    double focal,
                    int width,
                    int height);

// Per-vertex albedo of the head proxy (skin with lips, brows and eye regions).
Positions headAlbedo(const BlendshapeRig& templ);

// Analytic Lambertian render with a fixed directional light.
struct LambertRender {
  Image image;  // RGB
  Image mask;   // {0, 1}
};
LambertRender renderLambertian(const Positions& world,
                               const Faces& faces,
                               const Positions& albedo,
                               const Camera& camera,
                               double background = 0.2);

struct SynthSpec {
  int views = 4;
  std::vector<double> fps = {6.0, 5.0, 7.0, 6.0};
  double duration = 5.0;
  int resolution = 128;
  std::uint64_t seed = 1;
  double landmarkNoise = 0.5;  // pixels
  // Start offsets are drawn in [0, maxOffset) frame intervals.
  double maxOffset = 0.5;

  void validate() const;
};

struct SynthResult {
  std::vector<int> frameCounts;
  std::vector<FrameClock> clocks;
};

// floor(duration * rate), guarded against rounding just below an integer.
int frameCountFor(double duration, double rate);

// Writes a complete project (config.json, rig/, views/, scan.ply) plus
// ground_truth/rig/ under `root`.
SynthResult synthesizeProject(const SynthSpec& spec, const std::filesystem::path& root);

// Scan of a rig mesh restricted to the facial region.
GroundTruthScan facialScan(const TriMesh& mesh, const std::vector<bool>& region);

}  // namespace blendrig
