#include "blendrig/config.h"

#include "blendrig/error.h"

#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>

namespace blendrig {

namespace {

using nlohmann::json;

// Project layout entries that may share the config file.
const std::set<std::string> kProjectKeys = {"rig_manifest", "scan", "views_dir"};

json toJson(const TrainConfig& c) {
  json j;
  j["total_epochs"] = c.totalEpochs;
  j["full_loss_epochs"] = c.fullLossEpochs;
  j["weights"] = {{"landmark", c.weights.landmark},
                  {"mask", c.weights.mask},
                  {"photometric", c.weights.photometric},
                  {"latent_laplacian", c.weights.latentLaplacian},
                  {"locality", c.weights.locality},
                  {"sparsity", c.weights.sparsity},
                  {"expression", c.weights.expression},
                  {"neutral", c.weights.neutral}};
  j["lambda"] = c.lambda;
  j["locality_scale"] = c.localityScale ? json(*c.localityScale) : json(nullptr);
  j["sparsity_p"] = c.sparsityP;
  j["sigma"] = c.sigma;
  j["latent_dim"] = c.appearance.latentDim;
  j["camera_latent_dim"] = c.appearance.cameraLatentDim;
  j["shader_hidden"] = c.appearance.hiddenUnits;
  j["grid"] = {{"levels", c.grid.levels},
               {"base_resolution", c.grid.baseResolution},
               {"channels", c.grid.channels},
               {"growth_factor", c.grid.growthFactor}};
  j["head_hidden"] = c.headHidden;
  j["learning_rate"] = c.adam.learningRate;
  j["adam_beta1"] = c.adam.beta1;
  j["adam_beta2"] = c.adam.beta2;
  j["adam_epsilon"] = c.adam.epsilon;
  j["seed"] = c.seed;
  j["render_width"] = c.renderWidth;
  j["render_height"] = c.renderHeight;
  j["mode"] = toString(c.mode);
  j["clamp_beta"] = c.clampBeta;
  j["normalize_losses"] = c.normalizeLosses;
  return j;
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) {
    out = j.at(key).get<T>();
  }
}

void checkKeys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) {
      throw InputError("unknown config key '" + where + key + "'");
    }
  }
}

}  // namespace

std::string toString(TrainMode mode) { return mode == TrainMode::Joint ? "joint" : "two_stage"; }

TrainMode parseTrainMode(const std::string& text) {
  if (text == "joint") {
    return TrainMode::Joint;
  }
  if (text == "two_stage") {
    return TrainMode::TwoStage;
  }
  throw InputError("unknown mode '" + text + "' (expected joint or two_stage)");
}

void TrainConfig::validate() const {
  if (totalEpochs < 0 || fullLossEpochs < 0 || fullLossEpochs > totalEpochs) {
    throw InputError("need 0 <= full_loss_epochs <= total_epochs");
  }
  const double w[] = {weights.landmark,  weights.mask,     weights.photometric, weights.latentLaplacian,
                      weights.locality,  weights.sparsity, weights.expression,  weights.neutral};
  for (double x : w) {
    if (!(x >= 0.0)) {
      throw InputError("loss weights must be non-negative");
    }
  }
  if (!(adam.learningRate > 0.0)) {
    throw InputError("learning rate must be positive");
  }
  if (!(lambda >= 0.0) || !(sigma > 0.0) || !(sparsityP > 0.0)) {
    throw InputError("lambda >= 0, sigma > 0 and sparsity_p > 0 are required");
  }
  if (localityScale && !(*localityScale > 0.0)) {
    throw InputError("locality_scale must be positive");
  }
  if (renderWidth <= 0 || renderHeight <= 0) {
    throw InputError("render resolution must be positive");
  }
}

std::uint64_t fnv1a(const void* data, size_t size, std::uint64_t seed) {
  std::uint64_t h = seed;
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < size; ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t TrainConfig::hash() const {
  const std::string text = toJson(*this).dump();
  return fnv1a(text.data(), text.size());
}

std::string configToJson(const TrainConfig& config) { return toJson(config).dump(2); }

TrainConfig configFromJson(const std::string& text) {
  TrainConfig c;
  try {
    const json j = json::parse(text);
    std::set<std::string> allowed = kProjectKeys;
    const json defaults = toJson(c);
    for (const auto& [key, value] : defaults.items()) {
      allowed.insert(key);
    }
    checkKeys(j, allowed, "");
    read(j, "total_epochs", c.totalEpochs);
    read(j, "full_loss_epochs", c.fullLossEpochs);
    if (j.contains("weights")) {
      const json& w = j.at("weights");
      checkKeys(w, {"landmark", "mask", "photometric", "latent_laplacian", "locality", "sparsity", "expression",
                    "neutral"},
                "weights.");
      read(w, "landmark", c.weights.landmark);
      read(w, "mask", c.weights.mask);
      read(w, "photometric", c.weights.photometric);
      read(w, "latent_laplacian", c.weights.latentLaplacian);
      read(w, "locality", c.weights.locality);
      read(w, "sparsity", c.weights.sparsity);
      read(w, "expression", c.weights.expression);
      read(w, "neutral", c.weights.neutral);
    }
    read(j, "lambda", c.lambda);
    if (j.contains("locality_scale") && !j.at("locality_scale").is_null()) {
      c.localityScale = j.at("locality_scale").get<double>();
    }
    read(j, "sparsity_p", c.sparsityP);
    read(j, "sigma", c.sigma);
    read(j, "latent_dim", c.appearance.latentDim);
    read(j, "camera_latent_dim", c.appearance.cameraLatentDim);
    read(j, "shader_hidden", c.appearance.hiddenUnits);
    if (j.contains("grid")) {
      const json& g = j.at("grid");
      checkKeys(g, {"levels", "base_resolution", "channels", "growth_factor"}, "grid.");
      read(g, "levels", c.grid.levels);
      read(g, "base_resolution", c.grid.baseResolution);
      read(g, "channels", c.grid.channels);
      read(g, "growth_factor", c.grid.growthFactor);
    }
    read(j, "head_hidden", c.headHidden);
    read(j, "learning_rate", c.adam.learningRate);
    read(j, "adam_beta1", c.adam.beta1);
    read(j, "adam_beta2", c.adam.beta2);
    read(j, "adam_epsilon", c.adam.epsilon);
    read(j, "seed", c.seed);
    read(j, "render_width", c.renderWidth);
    read(j, "render_height", c.renderHeight);
    if (j.contains("mode")) {
      c.mode = parseTrainMode(j.at("mode").get<std::string>());
    }
    read(j, "clamp_beta", c.clampBeta);
    read(j, "normalize_losses", c.normalizeLosses);
  } catch (const json::exception& e) {
    throw InputError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

TrainConfig loadTrainConfig(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw InputError("cannot open config " + path.string());
  }
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return configFromJson(ss.str());
  } catch (const InputError& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

void saveTrainConfig(const TrainConfig& config, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) {
    throw InputError("cannot write config " + path.string());
  }
  out << configToJson(config) << '\n';
}

}  // namespace blendrig
