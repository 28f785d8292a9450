#pragma once

#include "blendrig/dataset.h"
#include "blendrig/render.h"
#include "blendrig/synth.h"
#include "blendrig/trainer.h"

#include "gradcheck.h"

#include <cstring>
#include <filesystem>
#include <random>
#include <string>

namespace blendrig::testing {

// Coarse head proxy (a few hundred vertices) for tests that run the trainer.
inline BlendshapeRig smallHead() { return makeHeadTemplate(14, 18); }

// In-memory multi-view capture of `rig` following the synthetic trajectory.
// Landmarks are exact projections; occluded ones get weight 0.
inline Dataset renderDataset(const BlendshapeRig& rig,
                             int views,
                             int frames,
                             int resolution,
                             std::uint64_t seed,
                             double rate = 5.0) {
  MotionTrajectory trajectory;
  trajectory.seed = seed;
  trajectory.basisCount = rig.basisCount();
  const Positions albedo = headAlbedo(rig);
  Dataset data;
  for (int k = 0; k < views; ++k) {
    ViewData v;
    v.name = "cam" + std::to_string(k);
    v.camera = makeFixtureCamera(k, views, resolution);
    v.clock.frameRate = rate;
    v.clock.startTime = 0.37 * k / (rate * views);
    for (int i = 0; i < frames; ++i) {
      FrameRecord fr;
      fr.index = i;
      fr.time = frameTime(v.clock, i);
      const MotionParameters m = trajectory.at(fr.time);
      Positions y = evaluateExpression(rig, m.beta) * m.rotation.transpose();
      y.rowwise() += m.translation.transpose();
      const LambertRender r = renderLambertian(y, rig.neutral.faces, albedo, v.camera);
      fr.image = r.image;
      fr.mask = r.mask;
      const Positions points = embedLandmarks(y, rig.neutral.faces, rig.landmarks);
      const ScreenVertices screen = projectVertices(v.camera, y);
      const RasterOutput raster = rasterize(screen, rig.neutral.faces, resolution, resolution);
      fr.landmarks.points.resize(points.rows(), 2);
      fr.landmarks.weights.resize(points.rows());
      for (Eigen::Index l = 0; l < points.rows(); ++l) {
        const Projection p = project(v.camera, points.row(l).transpose());
        fr.landmarks.points.row(l) = p.pixel.transpose();
        const int col = static_cast<int>(std::floor(p.pixel.x()));
        const int row = static_cast<int>(std::floor(p.pixel.y()));
        bool visible = p.valid && col >= 0 && row >= 0 && col < resolution && row < resolution;
        if (visible) {
          visible = raster.depth[static_cast<size_t>(row) * resolution + col] >= p.depth - 0.005;
        }
        fr.landmarks.weights(l) = visible ? 1.0 : 0.0;
      }
      v.frames.push_back(std::move(fr));
    }
    data.views.push_back(std::move(v));
  }
  data.fitNormalizer();
  return data;
}

// Every trainable tensor of a state as a flat view, in StateGradients::flatten order.
inline std::vector<Eigen::Map<Eigen::VectorXd>> parameterGroups(TrainState& s) {
  std::vector<Eigen::Map<Eigen::VectorXd>> out;
  out.emplace_back(s.rig.neutral.data(), s.rig.neutral.size());
  for (auto& b : s.rig.bases) {
    out.emplace_back(b.data(), b.size());
  }
  out.emplace_back(s.regressor.grid().features().data(), s.regressor.grid().features().size());
  out.emplace_back(s.regressor.head().parameters().data(), s.regressor.head().parameters().size());
  out.emplace_back(s.appearance.vertexLatents.data(), s.appearance.vertexLatents.size());
  out.emplace_back(s.appearance.shader.parameters().data(), s.appearance.shader.parameters().size());
  out.emplace_back(s.appearance.cameraLatents.data(), s.appearance.cameraLatents.size());
  return out;
}

inline std::vector<OptimizerState*> optimizerStates(TrainState& s) {
  std::vector<OptimizerState*> out = {&s.rigNeutralOpt};
  for (auto& o : s.rigBasisOpt) {
    out.push_back(&o);
  }
  for (auto* o : {&s.gridOpt, &s.headOpt, &s.latentOpt, &s.shaderOpt, &s.cameraLatentOpt}) {
    out.push_back(o);
  }
  return out;
}

inline bool sameBits(const Eigen::Ref<const Eigen::VectorXd>& a, const Eigen::Ref<const Eigen::VectorXd>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), static_cast<size_t>(a.size()) * sizeof(double)) == 0;
}

inline bool sameState(TrainState& a, TrainState& b) {
  auto ga = parameterGroups(a);
  auto gb = parameterGroups(b);
  for (size_t k = 0; k < ga.size(); ++k) {
    if (!sameBits(ga[k], gb[k])) {
      return false;
    }
  }
  auto oa = optimizerStates(a);
  auto ob = optimizerStates(b);
  for (size_t k = 0; k < oa.size(); ++k) {
    if (oa[k]->step != ob[k]->step || !sameBits(oa[k]->firstMoment, ob[k]->firstMoment) ||
        !sameBits(oa[k]->secondMoment, ob[k]->secondMoment)) {
      return false;
    }
  }
  if (a.epoch != b.epoch || a.history.size() != b.history.size()) {
    return false;
  }
  for (size_t e = 0; e < a.history.size(); ++e) {
    if (std::memcmp(a.history[e].terms.data(), b.history[e].terms.data(), sizeof(double) * LossBreakdown::kTerms) != 0 ||
        a.history[e].total != b.history[e].total) {
      return false;
    }
  }
  return true;
}

// A state off the initialization: random rig deformation, motion head and
// latents. The zero-initialized head output layer would otherwise block the
// grid gradient and keep every expression coefficient at zero.
inline TrainState perturbedState(const Trainer& trainer, std::uint64_t seed) {
  TrainState s = trainer.initialState();
  auto groups = parameterGroups(s);
  const size_t m = s.rig.bases.size();
  for (size_t j = 0; j <= m; ++j) {
    groups[j] += randomVector(groups[j].size(), seed + j, 1e-3);
  }
  groups[m + 2] += randomVector(groups[m + 2].size(), seed + 99, 0.01);
  groups[m + 3] += randomVector(groups[m + 3].size(), seed + 100, 0.3);
  groups[m + 5] += randomVector(groups[m + 5].size(), seed + 101, 0.3);
  return s;
}

// Short config for the small head: 32 x 32 renders, `epochs` total with the
// last `full` at the full loss.
inline TrainConfig smallConfig(int epochs, int full, std::uint64_t seed = 3) {
  TrainConfig c;
  c.totalEpochs = epochs;
  c.fullLossEpochs = full;
  c.renderWidth = 32;
  c.renderHeight = 32;
  c.seed = seed;
  return c;
}

// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratchDir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("blendrig_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace blendrig::testing
