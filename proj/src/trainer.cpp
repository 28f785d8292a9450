#include "blendrig/trainer.h"

#include "blendrig/camera.h"
#include "blendrig/error.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

namespace blendrig {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t subSeed(std::uint64_t seed, std::uint64_t tag) { return splitmix(seed ^ splitmix(tag)); }

Eigen::Map<Eigen::VectorXd> flat(Positions& p) { return {p.data(), p.size()}; }
Eigen::Map<const Eigen::VectorXd> flat(const Positions& p) { return {p.data(), p.size()}; }
Eigen::Map<Eigen::VectorXd> flat(LatentMatrix& p) { return {p.data(), p.size()}; }
Eigen::Map<Eigen::VectorXd> flat(Eigen::MatrixXd& p) { return {p.data(), p.size()}; }

}  // namespace

const std::array<const char*, LossBreakdown::kTerms>& LossBreakdown::names() {
  static const std::array<const char*, kTerms> n = {"landmark", "mask",     "photometric", "latent_laplacian",
                                                    "locality", "sparsity", "expression",  "neutral"};
  return n;
}

double LossBreakdown::sum() const {
  double s = 0.0;
  for (double t : terms) {
    s += t;
  }
  return s;
}

std::vector<Eigen::VectorXd> StateGradients::flatten() const {
  std::vector<Eigen::VectorXd> out;
  out.emplace_back(Eigen::Map<const Eigen::VectorXd>(rig.neutral.data(), rig.neutral.size()));
  for (const auto& b : rig.bases) {
    out.emplace_back(Eigen::Map<const Eigen::VectorXd>(b.data(), b.size()));
  }
  out.push_back(regressor.grid);
  out.push_back(regressor.head);
  out.emplace_back(Eigen::Map<const Eigen::VectorXd>(latents.data(), latents.size()));
  out.push_back(shader);
  out.emplace_back(Eigen::Map<const Eigen::VectorXd>(cameraLatents.data(), cameraLatents.size()));
  return out;
}

Trainer::Trainer(BlendshapeRig templ, Dataset data, TrainConfig config)
    : templ_(std::move(templ)), data_(std::move(data)), config_(std::move(config)) {
  config_.validate();
  templ_.validate();
  if (templ_.landmarks.empty()) {
    throw InputError("template rig has no landmark anchors");
  }
  data_.validate(static_cast<int>(templ_.landmarks.size()), config_.fullLossEpochs > 0);
  const AugmentedTopology topo =
      templ_.hasFill() ? buildAugmentedTopology(templ_.neutral, templ_.fill) : buildSurfaceTopology(templ_.neutral);
  totalVertices_ = topo.vertexCount;
  system_ = DiffCoordSystem(buildCombinatorialLaplacian(topo), config_.lambda);
  surfaceLaplacian_ = buildCombinatorialLaplacian(buildSurfaceTopology(templ_.neutral));
  edges_ = buildMeshEdges(templ_.neutral.faces);
  localityWeights_ = config_.localityScale ? localityWeights(templ_.basis, *config_.localityScale)
                                           : localityWeights(templ_.basis, defaultLocalityScales(templ_.basis));
}

TrainState Trainer::initialState() const {
  const int m = templ_.basisCount();
  TrainState s;
  s.rig = RigDeformation::zeros(totalVertices_, m);
  s.regressor = SyncRegressor(config_.grid, config_.headHidden, m);
  s.regressor.clampBeta = config_.clampBeta;
  s.regressor.initialize(subSeed(config_.seed, 1));
  s.appearance =
      NeuralAppearance::create(config_.appearance, templ_.vertexCount(), static_cast<int>(data_.views.size()));
  s.appearance.initialize(subSeed(config_.seed, 2));

  const auto& h = config_.adam;
  s.rigNeutralOpt = OptimizerState::create(OptimizerKind::AdamUniform, s.rig.neutral.size(), h);
  for (int j = 0; j < m; ++j) {
    s.rigBasisOpt.push_back(OptimizerState::create(OptimizerKind::AdamUniform, s.rig.neutral.size(), h));
  }
  s.gridOpt = OptimizerState::create(OptimizerKind::Adam, s.regressor.grid().features().size(), h);
  s.headOpt = OptimizerState::create(OptimizerKind::Adam, s.regressor.head().parameters().size(), h);
  s.latentOpt = OptimizerState::create(OptimizerKind::Adam, s.appearance.vertexLatents.size(), h);
  s.shaderOpt = OptimizerState::create(OptimizerKind::Adam, s.appearance.shader.parameters().size(), h);
  s.cameraLatentOpt = OptimizerState::create(OptimizerKind::Adam, s.appearance.cameraLatents.size(), h);
  return s;
}

Stage Trainer::stageForEpoch(int epoch) const {
  if (epoch < config_.coarseEpochs()) {
    return Stage::Coarse;
  }
  return config_.mode == TrainMode::Joint ? Stage::Full : Stage::FrozenMotion;
}

namespace {

Positions expressionSurface(const PersonalizedSurfaces& s, const Eigen::VectorXd& beta) {
  const Eigen::VectorXd offset = s.basis * beta;
  return s.neutral + Eigen::Map<const Positions>(offset.data(), s.neutral.rows(), 3);
}

Positions poseSurface(const Positions& x, const MotionParameters& motion) {
  Positions y = x * motion.rotation.transpose();
  y.rowwise() += motion.translation.transpose();
  return y;
}

void checkFinite(double value, const char* name) {
  if (!std::isfinite(value)) {
    throw NumericalError(std::string("non-finite ") + name + " loss");
  }
}

}  // namespace

LossBreakdown Trainer::frameLoss(const TrainState& state,
                                 int view,
                                 int frame,
                                 Stage stage,
                                 StateGradients* grads) const {
  const ViewData& v = data_.views.at(static_cast<size_t>(view));
  const FrameRecord& fr = v.frames.at(static_cast<size_t>(frame));
  const auto& w = config_.weights;
  const bool full = stage != Stage::Coarse;
  const int n = templ_.vertexCount();
  const int m = templ_.basisCount();

  SyncRegressor::Cache regCache;
  const MotionParameters motion = state.regressor.forward(data_.normalizer.normalize(fr.time), &regCache);
  const PersonalizedSurfaces surfaces = personalizeSurfaces(templ_, state.rig, system_);
  const Positions x = expressionSurface(surfaces, motion.beta);
  const Positions y = poseSurface(x, motion);

  LossBreakdown loss;
  Positions gY = Positions::Zero(n, 3);

  // Landmarks.
  const Positions points = embedLandmarks(y, templ_.neutral.faces, templ_.landmarks);
  const auto count = static_cast<int>(points.rows());
  Eigen::MatrixX2d projected(count, 2);
  std::vector<bool> visible(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    const Projection p = project(v.camera, points.row(i).transpose());
    projected.row(i) = p.pixel.transpose();
    visible[static_cast<size_t>(i)] = p.valid && fr.landmarks.weights(i) > 0.0;
  }
  // A frame where every landmark is occluded contributes no landmark term.
  const bool anyVisible = std::find(visible.begin(), visible.end(), true) != visible.end();
  Eigen::MatrixX2d gPix;
  if (anyVisible) {
    loss.terms[kLandmarkTerm] = w.landmark * landmarkLoss(projected, visible, fr.landmarks, grads ? &gPix : nullptr);
  }
  if (anyVisible && grads != nullptr && w.landmark != 0.0) {
    Positions gPoints = Positions::Zero(count, 3);
    for (int i = 0; i < count; ++i) {
      if (!visible[static_cast<size_t>(i)]) {
        continue;
      }
      const Eigen::Matrix3d jac = projectJacobian(v.camera, points.row(i).transpose());
      gPoints.row(i) = w.landmark * (jac.topRows<2>().transpose() * gPix.row(i).transpose()).transpose();
    }
    embedLandmarksBackward(templ_.neutral.faces, templ_.landmarks, gPoints, gY);
  }

  Eigen::VectorXd gBetaExp;
  loss.terms[kExpressionTerm] = w.expression * expressionReg(motion.beta, grads ? &gBetaExp : nullptr);

  Image gMask;
  Image gImage;
  RenderCache renderCache;
  LatentMatrix gLatLap;
  Eigen::MatrixXd gLocality;
  Eigen::MatrixXd gSparsity;
  Positions gNeutralReg;
  if (full) {
    const FrameRender r =
        renderFrame(y, templ_.neutral.faces, edges_, v.camera, state.appearance, config_.sigma, &renderCache);
    loss.terms[kMaskTerm] =
        w.mask * maskLoss(r.mask, fr.mask, config_.normalizeLosses, grads ? &gMask : nullptr);
    loss.terms[kPhotometricTerm] = w.photometric * photometricLoss(r.image, fr.image, fr.mask,
                                                                   config_.normalizeLosses,
                                                                   grads ? &gImage : nullptr);
    loss.terms[kLatentLaplacianTerm] =
        w.latentLaplacian *
        latentLaplacianLoss(surfaceLaplacian_, state.appearance.vertexLatents, grads ? &gLatLap : nullptr);
    loss.terms[kLocalityTerm] = w.locality * localityLoss(localityWeights_, surfaces.basis, templ_.basis,
                                                          grads ? &gLocality : nullptr);
    SparsityOptions sp;
    sp.p = config_.sparsityP;
    loss.terms[kSparsityTerm] =
        w.sparsity * sparsityLoss(surfaces.basis, templ_.basis, sp, grads ? &gSparsity : nullptr);
    loss.terms[kNeutralTerm] =
        w.neutral * neutralReg(surfaces.neutral, templ_.neutral.vertices, grads ? &gNeutralReg : nullptr);
  }
  for (int k = 0; k < LossBreakdown::kTerms; ++k) {
    checkFinite(loss.terms[static_cast<size_t>(k)], LossBreakdown::names()[static_cast<size_t>(k)]);
  }
  loss.total = loss.sum();

  if (grads == nullptr) {
    return loss;
  }

  StateGradients& g = *grads;
  g.rig = RigDeformation::zeros(totalVertices_, m);
  g.regressor.resize(state.regressor.grid().features().size(), state.regressor.head().parameters().size());
  g.latents = LatentMatrix::Zero(n, config_.appearance.latentDim);
  g.shader = Eigen::VectorXd::Zero(state.appearance.shader.parameters().size());
  g.cameraLatents = Eigen::MatrixXd::Zero(state.appearance.cameraLatents.rows(), state.appearance.cameraLatents.cols());

  if (full) {
    for (auto& value : gImage.data) {
      value *= w.photometric;
    }
    for (auto& value : gMask.data) {
      value *= w.mask;
    }
    const RenderGradients rg =
        renderBackward(renderCache, templ_.neutral.faces, v.camera, state.appearance, gImage, gMask);
    gY += rg.vertices;
    g.latents = rg.latents + w.latentLaplacian * gLatLap;
    g.shader = rg.shader;
    g.cameraLatents.col(view) = rg.cameraLatent;
  }

  const Positions gX = gY * motion.rotation;
  const Eigen::Matrix3d gR = gY.transpose() * x;
  const Eigen::Vector3d gT = gY.colwise().sum().transpose();
  const Eigen::VectorXd gBeta = surfaces.basis.transpose() * flat(gX) + w.expression * gBetaExp;

  if (full) {
    const Positions gNeutral = gX + w.neutral * gNeutralReg;
    const Eigen::MatrixXd gBasis = flat(gX) * motion.beta.transpose() + w.locality * gLocality + w.sparsity * gSparsity;
    g.rig = personalizeBackward(templ_, system_, gNeutral, gBasis);
  }
  if (stage != Stage::FrozenMotion) {
    state.regressor.backward(regCache, gR, gT, gBeta, g.regressor);
  }
  return loss;
}

std::vector<std::pair<int, int>> Trainer::epochOrder(int epoch) const {
  std::vector<std::pair<int, int>> order;
  for (size_t v = 0; v < data_.views.size(); ++v) {
    for (size_t f = 0; f < data_.views[v].frames.size(); ++f) {
      order.emplace_back(static_cast<int>(v), static_cast<int>(f));
    }
  }
  std::mt19937_64 rng(subSeed(config_.seed, 1000 + static_cast<std::uint64_t>(epoch)));
  for (size_t i = order.size(); i > 1; --i) {
    const size_t j = static_cast<size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

LossBreakdown Trainer::step(TrainState& state, int view, int frame, Stage stage) const {
  StateGradients g;
  const LossBreakdown loss = frameLoss(state, view, frame, stage, &g);
  if (stage != Stage::Coarse) {
    optimizerStep(state.rigNeutralOpt, flat(state.rig.neutral), flat(g.rig.neutral));
    for (size_t j = 0; j < state.rig.bases.size(); ++j) {
      optimizerStep(state.rigBasisOpt[j], flat(state.rig.bases[j]), flat(g.rig.bases[j]));
    }
    optimizerStep(state.latentOpt, flat(state.appearance.vertexLatents), flat(g.latents));
    optimizerStep(state.shaderOpt, state.appearance.shader.parameters(), g.shader);
    optimizerStep(state.cameraLatentOpt, flat(state.appearance.cameraLatents), flat(g.cameraLatents));
  }
  if (stage != Stage::FrozenMotion) {
    optimizerStep(state.gridOpt, state.regressor.grid().features(), g.regressor.grid);
    optimizerStep(state.headOpt, state.regressor.head().parameters(), g.regressor.head);
  }
  return loss;
}

void Trainer::trainEpoch(TrainState& state) const {
  const Stage stage = stageForEpoch(state.epoch);
  const auto order = epochOrder(state.epoch);
  LossBreakdown mean;
  for (const auto& [view, frame] : order) {
    const LossBreakdown l = step(state, view, frame, stage);
    for (int k = 0; k < LossBreakdown::kTerms; ++k) {
      mean.terms[static_cast<size_t>(k)] += l.terms[static_cast<size_t>(k)];
    }
  }
  for (auto& t : mean.terms) {
    t /= static_cast<double>(order.size());
  }
  mean.total = mean.sum();
  state.history.push_back(mean);
  ++state.epoch;
}

BlendshapeRig Trainer::personalizedRig(const TrainState& state) const {
  return personalize(templ_, state.rig, system_);
}

MotionParameters Trainer::motionAt(const TrainState& state, double seconds) const {
  return state.regressor.forward(data_.normalizer.normalize(seconds));
}

Positions Trainer::surfaceAt(const TrainState& state, double seconds) const {
  const MotionParameters motion = motionAt(state, seconds);
  return poseSurface(expressionSurface(personalizeSurfaces(templ_, state.rig, system_), motion.beta), motion);
}

FitResult fit(const Trainer& trainer, const FitOptions& options) {
  FitResult result;
  result.state = options.resume ? *options.resume : trainer.initialState();
  TrainState& st = result.state;
  try {
    while (st.epoch < trainer.config().totalEpochs) {
      if (options.stopAfterEpoch >= 0 && st.epoch >= options.stopAfterEpoch) {
        break;
      }
      trainer.trainEpoch(st);
      if (options.onEpoch) {
        options.onEpoch(st);
      }
    }
  } catch (...) {
    if (!options.checkpoint.empty()) {
      saveCheckpoint(st, trainer.config(), options.checkpoint);
    }
    throw;
  }
  if (!options.checkpoint.empty()) {
    saveCheckpoint(st, trainer.config(), options.checkpoint);
  }
  result.rig = trainer.personalizedRig(st);
  return result;
}

// ---- checkpoint ----

namespace {

constexpr char kMagic[4] = {'B', 'R', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : out_(path, std::ios::binary) {
    if (!out_) {
      throw InputError("cannot write checkpoint " + path.string());
    }
  }
  template <typename T>
  void pod(T value) {
    out_.write(reinterpret_cast<const char*>(&value), sizeof(T));
  }
  void vec(const double* data, Eigen::Index size) {
    pod<std::uint64_t>(static_cast<std::uint64_t>(size));
    out_.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(size * sizeof(double)));
  }
  template <typename M>
  void mat(const M& m) {
    vec(m.data(), m.size());
  }
  void optimizer(const OptimizerState& s) {
    pod<std::uint8_t>(static_cast<std::uint8_t>(s.kind));
    pod<std::int64_t>(s.step);
    mat(s.firstMoment);
    mat(s.secondMoment);
  }
  void finish(const std::filesystem::path& path) {
    out_.flush();
    if (!out_) {
      throw InputError("write failed: " + path.string());
    }
  }

 private:
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : in_(path, std::ios::binary), path_(path) {
    if (!in_) {
      throw InputError("cannot open checkpoint " + path.string());
    }
  }
  template <typename T>
  T pod() {
    T value{};
    in_.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!in_) {
      throw InputError("checkpoint " + path_.string() + " is truncated");
    }
    return value;
  }
  void vec(double* data, Eigen::Index expected, const char* what) {
    const auto size = pod<std::uint64_t>();
    if (size != static_cast<std::uint64_t>(expected)) {
      throw InputError(detail::concat("checkpoint ", path_.string(), ": ", what, " has ", size, " values, expected ",
                                      expected));
    }
    in_.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(size * sizeof(double)));
    if (!in_) {
      throw InputError("checkpoint " + path_.string() + " is truncated");
    }
  }
  template <typename M>
  void mat(M& m, const char* what) {
    vec(m.data(), m.size(), what);
  }
  void optimizer(OptimizerState& s, const char* what) {
    const auto kind = pod<std::uint8_t>();
    if (kind != static_cast<std::uint8_t>(s.kind)) {
      throw InputError(detail::concat("checkpoint ", path_.string(), ": optimizer kind mismatch for ", what));
    }
    s.step = pod<std::int64_t>();
    mat(s.firstMoment, what);
    mat(s.secondMoment, what);
  }
  void expectEnd() {
    in_.peek();
    if (!in_.eof()) {
      throw InputError("checkpoint " + path_.string() + " has trailing data");
    }
  }

 private:
  std::ifstream in_;
  std::filesystem::path path_;
};

}  // namespace

void saveCheckpoint(const TrainState& s, const TrainConfig& config, const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  Writer w(path);
  for (char c : kMagic) {
    w.pod(c);
  }
  w.pod<std::uint32_t>(kCheckpointVersion);
  w.pod<std::uint64_t>(config.hash());
  w.pod<std::int64_t>(s.epoch);
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(s.rig.bases.size()));
  w.mat(s.rig.neutral);
  for (const auto& b : s.rig.bases) {
    w.mat(b);
  }
  w.mat(s.regressor.grid().features());
  w.mat(s.regressor.head().parameters());
  w.mat(s.appearance.vertexLatents);
  w.mat(s.appearance.shader.parameters());
  w.mat(s.appearance.cameraLatents);
  w.optimizer(s.rigNeutralOpt);
  for (const auto& o : s.rigBasisOpt) {
    w.optimizer(o);
  }
  w.optimizer(s.gridOpt);
  w.optimizer(s.headOpt);
  w.optimizer(s.latentOpt);
  w.optimizer(s.shaderOpt);
  w.optimizer(s.cameraLatentOpt);
  w.pod<std::uint64_t>(s.history.size());
  for (const auto& h : s.history) {
    w.vec(h.terms.data(), LossBreakdown::kTerms);
    w.pod<double>(h.total);
  }
  w.finish(path);
}

TrainState loadCheckpoint(const std::filesystem::path& path, const Trainer& trainer) {
  Reader r(path);
  for (char c : kMagic) {
    if (r.pod<char>() != c) {
      throw InputError(path.string() + " is not a checkpoint");
    }
  }
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw InputError(detail::concat(path.string(), ": checkpoint version ", version, " is not supported"));
  }
  if (r.pod<std::uint64_t>() != trainer.config().hash()) {
    throw InputError(path.string() + ": checkpoint was written with a different configuration");
  }
  TrainState s = trainer.initialState();
  s.epoch = static_cast<int>(r.pod<std::int64_t>());
  if (r.pod<std::uint32_t>() != s.rig.bases.size()) {
    throw InputError(path.string() + ": blendshape count differs from the template");
  }
  r.mat(s.rig.neutral, "rig neutral");
  for (auto& b : s.rig.bases) {
    r.mat(b, "rig basis");
  }
  r.mat(s.regressor.grid().features(), "time grid");
  r.mat(s.regressor.head().parameters(), "motion head");
  r.mat(s.appearance.vertexLatents, "vertex latents");
  r.mat(s.appearance.shader.parameters(), "shader");
  r.mat(s.appearance.cameraLatents, "camera latents");
  r.optimizer(s.rigNeutralOpt, "rig neutral");
  for (auto& o : s.rigBasisOpt) {
    r.optimizer(o, "rig basis");
  }
  r.optimizer(s.gridOpt, "time grid");
  r.optimizer(s.headOpt, "motion head");
  r.optimizer(s.latentOpt, "vertex latents");
  r.optimizer(s.shaderOpt, "shader");
  r.optimizer(s.cameraLatentOpt, "camera latents");
  const auto entries = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < entries; ++i) {
    LossBreakdown h;
    r.vec(h.terms.data(), LossBreakdown::kTerms, "loss history");
    h.total = r.pod<double>();
    s.history.push_back(h);
  }
  r.expectEnd();
  return s;
}

void writeLossLog(const std::vector<LossBreakdown>& history, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) {
    throw InputError("cannot write " + path.string());
  }
  out << "epoch";
  for (const char* name : LossBreakdown::names()) {
    out << ',' << name;
  }
  out << ",total\n";
  char buf[32];
  for (size_t e = 0; e < history.size(); ++e) {
    out << e;
    for (double t : history[e].terms) {
      std::snprintf(buf, sizeof(buf), "%.17g", t);
      out << ',' << buf;
    }
    std::snprintf(buf, sizeof(buf), "%.17g", history[e].total);
    out << ',' << buf << '\n';
  }
}

}  // namespace blendrig
