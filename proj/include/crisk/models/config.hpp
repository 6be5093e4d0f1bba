#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <string_view>

#include <json.hpp>

#include "crisk/error.hpp"
#include "crisk/grad/layers.hpp"

namespace crisk::models {

enum class ModelKind { Dsm, Nfg, DeepHit };
enum class Distribution { Weibull, LogNormal };

inline const char* kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::Dsm:
      return "dsm";
    case ModelKind::Nfg:
      return "nfg";
    case ModelKind::DeepHit:
      return "deephit";
  }
  return "?";
}

inline ModelKind parse_kind(std::string_view s) {
  if (s == "dsm") return ModelKind::Dsm;
  if (s == "nfg") return ModelKind::Nfg;
  if (s == "deephit") return ModelKind::DeepHit;
  throw ConfigError("unknown model kind '" + std::string(s) + "' (expected dsm, nfg or deephit)");
}

inline const char* distribution_name(Distribution d) {
  return d == Distribution::Weibull ? "weibull" : "lognormal";
}

inline Distribution parse_distribution(std::string_view s) {
  if (s == "weibull") return Distribution::Weibull;
  if (s == "lognormal") return Distribution::LogNormal;
  throw ConfigError("unknown distribution '" + std::string(s) + "'");
}

inline constexpr std::size_t kUnlimitedPatience = std::numeric_limits<std::size_t>::max();

/// Hyperparameters for every model family. Fields that a family does not use
/// are ignored by it.
struct ModelConfig {
  ModelKind kind = ModelKind::Dsm;

  // Shared encoder and optimisation.
  double learning_rate = 1e-3;
  std::size_t batch_size = 256;
  double dropout = 0.0;
  std::size_t layers = 1;
  std::size_t nodes = 64;
  grad::Activation activation = grad::Activation::ReLU;
  double weight_decay = 0.0;
  std::size_t max_epochs = 1000;
  std::size_t patience = 10;

  // DSM
  Distribution distribution = Distribution::Weibull;
  std::size_t mixture_k = 3;
  std::size_t warmup_iterations = 10000;
  double warmup_learning_rate = 1e-2;

  // NFG
  std::size_t monotone_layers = 2;
  std::size_t monotone_nodes = 32;

  // DeepHit
  std::size_t bins = 15;
  double rank_alpha = 0.1;
  double rank_sigma = 1.0;
  std::size_t subnet_layers = 1;
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {
      {"kind", kind_name(c.kind)},
      {"learning_rate", c.learning_rate},
      {"batch_size", c.batch_size},
      {"dropout", c.dropout},
      {"layers", c.layers},
      {"nodes", c.nodes},
      {"activation", grad::activation_name(c.activation)},
      {"weight_decay", c.weight_decay},
      {"max_epochs", c.max_epochs},
      {"patience", c.patience == kUnlimitedPatience ? nlohmann::json(nullptr) : nlohmann::json(c.patience)},
      {"distribution", distribution_name(c.distribution)},
      {"mixture_k", c.mixture_k},
      {"warmup_iterations", c.warmup_iterations},
      {"warmup_learning_rate", c.warmup_learning_rate},
      {"monotone_layers", c.monotone_layers},
      {"monotone_nodes", c.monotone_nodes},
      {"bins", c.bins},
      {"rank_alpha", c.rank_alpha},
      {"rank_sigma", c.rank_sigma},
      {"subnet_layers", c.subnet_layers},
  };
}

/// Reads a config, starting from `base` for missing keys. Unknown keys are
/// rejected.
inline ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig c = {}) {
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  try {
    for (auto& [k, v] : j.items()) {
      if (k == "kind") c.kind = parse_kind(v.get<std::string>());
      else if (k == "learning_rate") c.learning_rate = v.get<double>();
      else if (k == "batch_size") c.batch_size = v.get<std::size_t>();
      else if (k == "dropout") c.dropout = v.get<double>();
      else if (k == "layers") c.layers = v.get<std::size_t>();
      else if (k == "nodes") c.nodes = v.get<std::size_t>();
      else if (k == "activation") c.activation = grad::parse_activation(v.get<std::string>());
      else if (k == "weight_decay") c.weight_decay = v.get<double>();
      else if (k == "max_epochs") c.max_epochs = v.get<std::size_t>();
      else if (k == "patience") c.patience = v.is_null() ? kUnlimitedPatience : v.get<std::size_t>();
      else if (k == "distribution") c.distribution = parse_distribution(v.get<std::string>());
      else if (k == "mixture_k") c.mixture_k = v.get<std::size_t>();
      else if (k == "warmup_iterations") c.warmup_iterations = v.get<std::size_t>();
      else if (k == "warmup_learning_rate") c.warmup_learning_rate = v.get<double>();
      else if (k == "monotone_layers") c.monotone_layers = v.get<std::size_t>();
      else if (k == "monotone_nodes") c.monotone_nodes = v.get<std::size_t>();
      else if (k == "bins") c.bins = v.get<std::size_t>();
      else if (k == "rank_alpha") c.rank_alpha = v.get<double>();
      else if (k == "rank_sigma") c.rank_sigma = v.get<double>();
      else if (k == "subnet_layers") c.subnet_layers = v.get<std::size_t>();
      else throw ConfigError("unknown model config key '" + k + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  if (c.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (c.dropout < 0.0 || c.dropout >= 1.0) throw ConfigError("dropout must lie in [0,1)");
  if (c.mixture_k == 0) throw ConfigError("mixture_k must be positive");
  if (c.bins < 1) throw ConfigError("bins must be positive");
  if (!(c.learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  return c;
}

}  // namespace crisk::models
