#pragma once

#include "blendrig/config.h"
#include "blendrig/dataset.h"
#include "blendrig/diff_coords.h"
#include "blendrig/optimizer.h"
#include "blendrig/render.h"
#include "blendrig/rig.h"
#include "blendrig/sync.h"

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace blendrig {

// Weighted loss terms of one frame (or the per-epoch mean of them).
struct LossBreakdown {
  static constexpr int kTerms = 8;
  static const std::array<const char*, kTerms>& names();

  std::array<double, kTerms> terms{};  // already multiplied by their weights
  double total = 0.0;

  double sum() const;
};

enum LossTerm : int {
  kLandmarkTerm = 0,
  kMaskTerm,
  kPhotometricTerm,
  kLatentLaplacianTerm,
  kLocalityTerm,
  kSparsityTerm,
  kExpressionTerm,
  kNeutralTerm,
};

// Which losses are active and which parameter groups are stepped.
enum class Stage {
  Coarse,        // landmark + expression prior; sync regressor only
  Full,          // every loss; every group
  FrozenMotion,  // every loss; regressor detached (two-stage second stage)
};

struct TrainState {
  RigDeformation rig;
  SyncRegressor regressor;
  NeuralAppearance appearance;

  OptimizerState rigNeutralOpt;
  std::vector<OptimizerState> rigBasisOpt;
  OptimizerState gridOpt;
  OptimizerState headOpt;
  OptimizerState latentOpt;
  OptimizerState shaderOpt;
  OptimizerState cameraLatentOpt;

  int epoch = 0;
  std::vector<LossBreakdown> history;
};

// Gradients of one frame loss w.r.t. every parameter group.
struct StateGradients {
  RigDeformation rig;
  SyncGradients regressor;
  LatentMatrix latents;
  Eigen::VectorXd shader;
  Eigen::MatrixXd cameraLatents;

  // Gradient groups in a fixed order, flattened (for checks and bookkeeping).
  std::vector<Eigen::VectorXd> flatten() const;
};

class Trainer {
 public:
  Trainer(BlendshapeRig templ, Dataset data, TrainConfig config);

  const TrainConfig& config() const { return config_; }
  const BlendshapeRig& templateRig() const { return templ_; }
  const Dataset& dataset() const { return data_; }
  const DiffCoordSystem& diffCoords() const { return system_; }
  const SparseOperator& surfaceLaplacian() const { return surfaceLaplacian_; }
  const MeshEdges& meshEdges() const { return edges_; }

  TrainState initialState() const;

  Stage stageForEpoch(int epoch) const;

  // Loss of one frame; when `grads` is given it receives the full gradient of
  // the weighted total w.r.t. every group (groups the stage leaves untouched
  // are zero).
  LossBreakdown frameLoss(const TrainState& state,
                          int view,
                          int frame,
                          Stage stage,
                          StateGradients* grads = nullptr) const;

  // Frame visiting order of an epoch: a seeded Fisher-Yates shuffle of all
  // (view, frame) pairs, derived from (seed, epoch).
  std::vector<std::pair<int, int>> epochOrder(int epoch) const;

  // One optimizer step on one frame.
  LossBreakdown step(TrainState& state, int view, int frame, Stage stage) const;

  void trainEpoch(TrainState& state) const;

  BlendshapeRig personalizedRig(const TrainState& state) const;

  // Motion at a wall-clock time (seconds).
  MotionParameters motionAt(const TrainState& state, double seconds) const;

  // Deformed world-space surface at a wall-clock time.
  Positions surfaceAt(const TrainState& state, double seconds) const;

 private:
  BlendshapeRig templ_;
  Dataset data_;
  TrainConfig config_;
  DiffCoordSystem system_;
  SparseOperator surfaceLaplacian_;
  MeshEdges edges_;
  Eigen::MatrixXd localityWeights_;
  int totalVertices_ = 0;
};

struct FitOptions {
  // Starting state (e.g. from a checkpoint); initialState() when unset.
  std::optional<TrainState> resume;
  // Stop after this many completed epochs (for interrupted runs); -1 = never.
  int stopAfterEpoch = -1;
  // Written at the end and when training aborts with an exception.
  std::filesystem::path checkpoint;
  std::function<void(const TrainState&)> onEpoch;
};

struct FitResult {
  BlendshapeRig rig;
  TrainState state;
};

FitResult fit(const Trainer& trainer, const FitOptions& options = {});

// Binary container: "BRCK", uint32 version, uint64 config hash, then every
// parameter tensor, optimizer buffer, the epoch counter and the loss history.
void saveCheckpoint(const TrainState& state, const TrainConfig& config, const std::filesystem::path& path);
// Throws InputError on a bad magic, version, shape or config hash.
TrainState loadCheckpoint(const std::filesystem::path& path, const Trainer& trainer);

// CSV with header "epoch,<term...>,total".
void writeLossLog(const std::vector<LossBreakdown>& history, const std::filesystem::path& path);

}  // namespace blendrig
