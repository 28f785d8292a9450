#pragma once

#include "blendrig/optimizer.h"
#include "blendrig/render.h"
#include "blendrig/sync.h"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

namespace blendrig {

enum class TrainMode { Joint, TwoStage };

std::string toString(TrainMode mode);
TrainMode parseTrainMode(const std::string& text);

// Landmarks are in pixels, image terms are per-pixel means, rig terms are in
// meters: the image terms need large weights to move geometry at all, and the
// L1 priors on beta and on basis updates must stay below the landmark pull.
struct LossWeights {
  double landmark = 1.0;
  double mask = 200.0;
  double photometric = 50.0;
  double latentLaplacian = 1.0;
  double locality = 1.0;
  double sparsity = 0.01;
  double expression = 0.01;
  double neutral = 1.0;
};

struct TrainConfig {
  int totalEpochs = 200;
  int fullLossEpochs = 120;
  LossWeights weights;
  double lambda = 19.0;
  // Unset: per-blendshape median displacement magnitude.
  std::optional<double> localityScale;
  double sparsityP = 0.75;
  double sigma = 1.0;
  AppearanceConfig appearance;
  TimeGridConfig grid;
  int headHidden = 64;
  AdamHyperparameters adam;
  std::uint64_t seed = 0;
  int renderWidth = 128;
  int renderHeight = 128;
  TrainMode mode = TrainMode::Joint;
  bool clampBeta = true;
  // Per-pixel mean image losses (false: plain sums).
  bool normalizeLosses = true;

  int coarseEpochs() const { return totalEpochs - fullLossEpochs; }
  void validate() const;
  // FNV-1a over the canonical JSON form.
  std::uint64_t hash() const;
};

// JSON keys mirror the fields in snake_case. Unknown keys are rejected; the
// project entries rig_manifest, scan and views_dir may share the file.
std::string configToJson(const TrainConfig& config);
TrainConfig configFromJson(const std::string& text);
TrainConfig loadTrainConfig(const std::filesystem::path& path);
void saveTrainConfig(const TrainConfig& config, const std::filesystem::path& path);

std::uint64_t fnv1a(const void* data, size_t size, std::uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace blendrig
