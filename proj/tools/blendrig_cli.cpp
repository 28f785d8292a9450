// blendrig: fit, evaluate, synthesize and preview personalized blendshape rigs.

#include "blendrig/config.h"
#include "blendrig/dataset.h"
#include "blendrig/error.h"
#include "blendrig/eval.h"
#include "blendrig/image.h"
#include "blendrig/render.h"
#include "blendrig/rig.h"
#include "blendrig/synth.h"
#include "blendrig/trainer.h"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace blendrig;

namespace {

constexpr int kExitInput = 1;
constexpr int kExitNumerical = 2;

// Runs `body`, mapping failures to exit codes and naming the stage that failed.
template <typename F>
int guarded(const std::string& command, std::string& stage, F&& body) {
  try {
    body();
    return 0;
  } catch (const InputError& e) {
    std::cerr << command << ": " << stage << " failed: " << e.what() << "\n";
    return kExitInput;
  } catch (const NumericalError& e) {
    std::cerr << command << ": " << stage << " failed (numerical): " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << command << ": " << stage << " failed: " << e.what() << "\n";
    return kExitInput;
  }
}

std::vector<std::string> splitList(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) {
      out.push_back(item);
    }
  }
  return out;
}

struct FitArgs {
  std::string project;
  std::string config;
  std::optional<int> epochs;
  std::string mode;
  std::optional<std::uint64_t> seed;
  std::string views;
  std::optional<int> resolution;
  std::string out;
  std::string resume;
};

// Applies command-line overrides. A new epoch count keeps the coarse/full split
// proportional to the configured one.
TrainConfig resolveConfig(const ProjectLayout& layout, const FitArgs& a) {
  TrainConfig config;
  if (!a.config.empty()) {
    config = loadTrainConfig(a.config);
  } else if (fs::exists(layout.config)) {
    config = loadTrainConfig(layout.config);
  }
  if (a.epochs) {
    if (*a.epochs < 0) {
      throw InputError("--epochs must be >= 0");
    }
    const double share = config.totalEpochs > 0 ? double(config.fullLossEpochs) / config.totalEpochs : 1.0;
    config.totalEpochs = *a.epochs;
    config.fullLossEpochs = static_cast<int>(std::lround(share * *a.epochs));
  }
  if (!a.mode.empty()) {
    config.mode = parseTrainMode(a.mode);
  }
  if (a.seed) {
    config.seed = *a.seed;
  }
  if (a.resolution) {
    config.renderWidth = *a.resolution;
    config.renderHeight = *a.resolution;
  }
  config.validate();
  return config;
}

int cmdFit(const FitArgs& a) {
  std::string stage = "load";
  return guarded("fit", stage, [&] {
    const ProjectLayout layout = ProjectLayout::discover(a.project);
    const TrainConfig config = resolveConfig(layout, a);
    const BlendshapeRig templ = loadRig(layout.rigManifest);
    Dataset data = loadDataset(layout, static_cast<int>(templ.landmarks.size()), config.renderWidth,
                               config.renderHeight, splitList(a.views));
    const fs::path out = a.out.empty() ? layout.out : fs::path(a.out);
    fs::create_directories(out);

    stage = "setup";
    const Trainer trainer(templ, std::move(data), config);
    FitOptions options;
    options.checkpoint = out / "checkpoint.bin";
    if (!a.resume.empty()) {
      options.resume = loadCheckpoint(a.resume, trainer);
    }
    const auto start = std::chrono::steady_clock::now();
    options.onEpoch = [&](const TrainState& s) {
      const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      std::printf("epoch %d/%d  loss %.6g  (%.0f s)\n", s.epoch, config.totalEpochs, s.history.back().total, elapsed);
      std::fflush(stdout);
    };

    stage = "train";
    const FitResult result = fit(trainer, options);

    stage = "export";
    saveTrainConfig(config, out / "config.json");
    saveRig(result.rig, out / "rig");
    writeLossLog(result.state.history, out / "loss_log.csv");
    std::printf("wrote %s\n", (out / "rig" / "manifest.json").string().c_str());
  });
}

struct EvalArgs {
  std::string recon;
  std::string reference;
  std::string align = "auto";
  std::string out;
  bool squared = false;
  bool symmetric = false;
  double cap = 5.0;
};

void printResult(const std::string& name, const PointToPlaneResult& r) {
  std::printf("%-12s mean %.3f mm  std %.3f mm  (%zu points)\n", name.c_str(), r.meanMm, r.stdMm, r.errorsMm.size());
}

int cmdEval(const EvalArgs& a) {
  std::string stage = "load";
  return guarded("eval", stage, [&] {
    const BlendshapeRig recon = loadRig(a.recon);
    PointToPlaneOptions options;
    options.squared = a.squared;
    options.symmetric = a.symmetric;
    const fs::path out = a.out;
    if (!out.empty()) {
      fs::create_directories(out);
    }
    const bool referenceIsRig = fs::path(a.reference).extension() == ".json";
    if (a.align != "auto" && a.align != "none" && a.align != "landmarks") {
      throw InputError("--align must be auto, none or landmarks");
    }
    if (referenceIsRig) {
      const BlendshapeRig reference = loadRig(a.reference);
      std::vector<bool> region(static_cast<size_t>(reference.vertexCount()));
      for (int i = 0; i < reference.vertexCount(); ++i) {
        region[static_cast<size_t>(i)] = reference.neutral.vertices(i, 2) > 0.0;
      }
      stage = "alignment";
      const bool align = a.align != "none";
      const RigEvaluation ev = evaluateRig(recon, reference, region, align, options);
      for (size_t k = 0; k < ev.names.size(); ++k) {
        printResult(ev.names[k], ev.results[k]);
      }
      std::printf("diagonal %.3f mm  worst mean %.3f mm\n", 1000.0 * boundingBoxDiagonal(reference.neutral.vertices),
                  ev.worstMeanMm());
      if (!out.empty()) {
        stage = "export";
        for (size_t k = 0; k < ev.names.size(); ++k) {
          const int j = static_cast<int>(k) - 1;
          const Positions v = j < 0 ? recon.neutral.vertices : recon.blendshapePositions(j);
          const Positions ref = j < 0 ? reference.neutral.vertices : reference.blendshapePositions(j);
          GroundTruthScan scan = scanFromMesh(TriMesh{ref, reference.neutral.faces});
          scan.region = region;
          const TriMesh mesh{v, recon.neutral.faces};
          exportHeatmap(mesh, splatErrorsToVertices(mesh, scan, ev.results[k]), out / (ev.names[k] + "_heatmap.ply"),
                        a.cap);
        }
      }
      return;
    }
    if (a.align == "landmarks") {
      throw InputError("landmark alignment needs a reference rig manifest, not a scan");
    }
    const GroundTruthScan scan = loadScanPly(a.reference);
    const PointToPlaneResult r = pointToPlaneError(recon.neutral, scan, options);
    printResult("neutral", r);
    if (!out.empty()) {
      stage = "export";
      exportHeatmap(recon.neutral, splatErrorsToVertices(recon.neutral, scan, r), out / "neutral_heatmap.ply", a.cap);
    }
  });
}

struct SynthArgs {
  std::string dir;
  int views = 4;
  std::string fps = "6,5,7,6";
  double duration = 5.0;
  int resolution = 128;
  std::uint64_t seed = 1;
  double noise = 0.5;
  double maxOffset = 0.5;
};

int cmdSynth(const SynthArgs& a) {
  std::string stage = "spec";
  return guarded("synth", stage, [&] {
    SynthSpec spec;
    spec.views = a.views;
    spec.fps.clear();
    for (const auto& item : splitList(a.fps)) {
      try {
        spec.fps.push_back(std::stod(item));
      } catch (const std::exception&) {
        throw InputError("bad frame rate '" + item + "'");
      }
    }
    if (spec.fps.size() == 1 && spec.views > 1) {
      spec.fps.assign(static_cast<size_t>(spec.views), spec.fps.front());
    }
    spec.duration = a.duration;
    spec.resolution = a.resolution;
    spec.seed = a.seed;
    spec.landmarkNoise = a.noise;
    spec.maxOffset = a.maxOffset;
    spec.validate();
    stage = "synthesis";
    const SynthResult r = synthesizeProject(spec, a.dir);
    for (size_t k = 0; k < r.frameCounts.size(); ++k) {
      std::printf("view %zu: %d frames at %.6g fps, start %.6f s\n", k, r.frameCounts[k], r.clocks[k].frameRate,
                  r.clocks[k].startTime);
    }
  });
}

struct RenderArgs {
  std::string project;
  std::string checkpoint;
  std::string config;
  std::string view;
  std::string camera;
  std::optional<double> time;
  std::optional<int> frame;
  std::string out = "preview.png";
};

int cmdRender(const RenderArgs& a) {
  std::string stage = "load";
  return guarded("render", stage, [&] {
    const ProjectLayout layout = ProjectLayout::discover(a.project);
    const fs::path ckpt = a.checkpoint.empty() ? layout.out / "checkpoint.bin" : fs::path(a.checkpoint);
    // The resolved config that fit wrote next to the checkpoint matches its hash.
    FitArgs fa;
    fa.project = a.project;
    fa.config = a.config;
    if (fa.config.empty() && fs::exists(ckpt.parent_path() / "config.json")) {
      fa.config = (ckpt.parent_path() / "config.json").string();
    }
    const TrainConfig config = resolveConfig(layout, fa);
    const BlendshapeRig templ = loadRig(layout.rigManifest);
    Dataset data =
        loadDataset(layout, static_cast<int>(templ.landmarks.size()), config.renderWidth, config.renderHeight);
    const Trainer trainer(templ, std::move(data), config);
    const TrainState state = loadCheckpoint(ckpt, trainer);

    int viewIndex = 0;
    if (!a.view.empty()) {
      viewIndex = -1;
      for (size_t k = 0; k < trainer.dataset().views.size(); ++k) {
        if (trainer.dataset().views[k].name == a.view) {
          viewIndex = static_cast<int>(k);
        }
      }
      if (viewIndex < 0) {
        throw InputError("unknown view '" + a.view + "'");
      }
    }
    const ViewData& view = trainer.dataset().views[static_cast<size_t>(viewIndex)];
    Camera camera = view.camera;
    if (!a.camera.empty()) {
      camera = rescaleCamera(loadCamera(a.camera), config.renderWidth, config.renderHeight);
      camera.view = viewIndex;
    }
    double t = view.frames.empty() ? 0.0 : view.frames.front().time;
    if (a.frame) {
      if (*a.frame < 0 || *a.frame >= static_cast<int>(view.frames.size())) {
        throw InputError("frame index out of range");
      }
      t = view.frames[static_cast<size_t>(*a.frame)].time;
    }
    if (a.time) {
      t = *a.time;
    }

    stage = "render";
    const FrameRender r = renderFrame(trainer.surfaceAt(state, t), templ.neutral.faces, trainer.meshEdges(), camera,
                                      state.appearance, config.sigma);
    savePng(r.image, a.out);
    std::printf("wrote %s (t = %.6f s)\n", a.out.c_str(), t);
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Personalized blendshape rig reconstruction"};
  app.require_subcommand(1);

  FitArgs fitArgs;
  auto* fitCmd = app.add_subcommand("fit", "Fit a personalized rig to a project");
  fitCmd->add_option("project", fitArgs.project, "Project directory")->required();
  fitCmd->add_option("--config", fitArgs.config, "Training config JSON (default: <project>/config.json)");
  fitCmd->add_option("--epochs", fitArgs.epochs, "Total epochs");
  fitCmd->add_option("--mode", fitArgs.mode, "joint or two_stage");
  fitCmd->add_option("--seed", fitArgs.seed, "Random seed");
  fitCmd->add_option("--views", fitArgs.views, "Comma-separated view names (default: all)");
  fitCmd->add_option("--resolution", fitArgs.resolution, "Render resolution (square)");
  fitCmd->add_option("--out", fitArgs.out, "Output directory (default: <project>/out)");
  fitCmd->add_option("--resume", fitArgs.resume, "Checkpoint to resume from");

  EvalArgs evalArgs;
  auto* evalCmd = app.add_subcommand("eval", "Point-to-plane error of a rig against a scan or reference rig");
  evalCmd->add_option("recon", evalArgs.recon, "Reconstructed rig manifest")->required();
  evalCmd->add_option("reference", evalArgs.reference, "Scan PLY or reference rig manifest")->required();
  evalCmd->add_option("--align", evalArgs.align, "auto, none or landmarks");
  evalCmd->add_option("--out", evalArgs.out, "Directory for heatmap PLYs");
  evalCmd->add_flag("--squared", evalArgs.squared, "Average squared plane distances");
  evalCmd->add_flag("--symmetric", evalArgs.symmetric, "Also measure reconstruction against the scan");
  evalCmd->add_option("--cap", evalArgs.cap, "Heatmap color cap in mm");

  SynthArgs synthArgs;
  auto* synthCmd = app.add_subcommand("synth", "Write a synthetic fixture project");
  synthCmd->add_option("dir", synthArgs.dir, "Output project directory")->required();
  synthCmd->add_option("--views", synthArgs.views, "Number of cameras");
  synthCmd->add_option("--fps", synthArgs.fps, "Comma-separated frame rates (one per view)");
  synthCmd->add_option("--duration", synthArgs.duration, "Seconds");
  synthCmd->add_option("--resolution", synthArgs.resolution, "Image size (square)");
  synthCmd->add_option("--seed", synthArgs.seed, "Random seed");
  synthCmd->add_option("--noise", synthArgs.noise, "Landmark noise in pixels");
  synthCmd->add_option("--max-offset", synthArgs.maxOffset, "Largest start offset in frame intervals");

  RenderArgs renderArgs;
  auto* renderCmd = app.add_subcommand("render", "Render a preview frame from a checkpoint");
  renderCmd->add_option("project", renderArgs.project, "Project directory")->required();
  renderCmd->add_option("--checkpoint", renderArgs.checkpoint, "Checkpoint (default: <project>/out/checkpoint.bin)");
  renderCmd->add_option("--config", renderArgs.config,
                        "Training config JSON (default: config.json beside the checkpoint)");
  renderCmd->add_option("--view", renderArgs.view, "Training view name (default: first)");
  renderCmd->add_option("--camera", renderArgs.camera, "Camera file for a novel view");
  renderCmd->add_option("--time", renderArgs.time, "Wall-clock time in seconds");
  renderCmd->add_option("--frame", renderArgs.frame, "Frame index of the view (sets the time)");
  renderCmd->add_option("--out", renderArgs.out, "Output PNG");

  CLI11_PARSE(app, argc, argv);

  if (*fitCmd) {
    return cmdFit(fitArgs);
  }
  if (*evalCmd) {
    return cmdEval(evalArgs);
  }
  if (*synthCmd) {
    return cmdSynth(synthArgs);
  }
  return cmdRender(renderArgs);
}
