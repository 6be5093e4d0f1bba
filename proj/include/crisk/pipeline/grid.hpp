#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "crisk/error.hpp"
#include "crisk/models/config.hpp"

namespace crisk::pipeline {

using models::Distribution;
using models::ModelConfig;
using models::ModelKind;

/// Random-search space. Learning rate is log-uniform over a range unless an
/// explicit value list is given; batch size and layers are integer-uniform
/// over closed ranges; everything else is drawn uniformly from a set. Extras
/// only apply to the matching model kind.
struct HParamGrid {
  double lr_min = 1e-4;
  double lr_max = 1e-2;
  std::vector<double> lr_values;
  std::size_t batch_min = 100;
  std::size_t batch_max = 1000;
  std::vector<double> dropout{0.0, 0.25, 0.5, 0.75};
  std::size_t layers_min = 1;
  std::size_t layers_max = 4;
  std::vector<std::size_t> nodes{32, 64, 128, 256, 512};
  std::vector<Distribution> distributions{Distribution::LogNormal, Distribution::Weibull};
  std::vector<std::size_t> mixture_k{3, 4, 6};
  std::vector<double> rank_alpha{0.1};

  void validate() const {
    if (lr_values.empty()) {
      if (!(lr_min > 0.0) || !(lr_max >= lr_min) || !std::isfinite(lr_max)) {
        throw ConfigError("grid: learning rate range must satisfy 0 < min <= max");
      }
    } else {
      for (double v : lr_values)
        if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError("grid: learning rates must be positive");
    }
    if (batch_min == 0 || batch_max < batch_min) throw ConfigError("grid: batch range must satisfy 0 < min <= max");
    if (layers_max < layers_min) throw ConfigError("grid: layers range must satisfy min <= max");
    auto nonempty = [](bool empty, const char* what) {
      if (empty) throw ConfigError(std::string("grid: ") + what + " set is empty");
    };
    nonempty(dropout.empty(), "dropout");
    nonempty(nodes.empty(), "nodes");
    nonempty(distributions.empty(), "distribution");
    nonempty(mixture_k.empty(), "mixture_k");
    nonempty(rank_alpha.empty(), "rank_alpha");
    for (double d : dropout)
      if (!(d >= 0.0 && d < 1.0)) throw ConfigError("grid: dropout values must lie in [0,1)");
    for (auto n : nodes)
      if (n == 0) throw ConfigError("grid: node counts must be positive");
    for (auto k : mixture_k)
      if (k == 0) throw ConfigError("grid: mixture_k values must be positive");
    for (double a : rank_alpha)
      if (!(a >= 0.0)) throw ConfigError("grid: rank_alpha values must be non-negative");
  }

  /// Draws one configuration; fields outside the grid keep their `base`
  /// values.
  template <class Rng>
  ModelConfig sample(const ModelConfig& base, Rng& rng) const {
    ModelConfig c = base;
    if (lr_values.empty()) {
      std::uniform_real_distribution<double> u(std::log(lr_min), std::log(lr_max));
      c.learning_rate = lr_min == lr_max ? lr_min : std::clamp(std::exp(u(rng)), lr_min, lr_max);
    } else {
      c.learning_rate = pick(lr_values, rng);
    }
    c.batch_size = std::uniform_int_distribution<std::size_t>(batch_min, batch_max)(rng);
    c.dropout = pick(dropout, rng);
    c.layers = std::uniform_int_distribution<std::size_t>(layers_min, layers_max)(rng);
    c.nodes = pick(nodes, rng);
    if (c.kind == ModelKind::Dsm) {
      c.distribution = pick(distributions, rng);
      c.mixture_k = pick(mixture_k, rng);
    } else if (c.kind == ModelKind::DeepHit) {
      c.rank_alpha = pick(rank_alpha, rng);
    }
    return c;
  }

  bool contains(const ModelConfig& c) const {
    auto in = [](const auto& set, const auto& v) { return std::find(set.begin(), set.end(), v) != set.end(); };
    const bool lr_ok = lr_values.empty() ? (c.learning_rate >= lr_min && c.learning_rate <= lr_max)
                                         : in(lr_values, c.learning_rate);
    bool ok = lr_ok && c.batch_size >= batch_min && c.batch_size <= batch_max && in(dropout, c.dropout) &&
              c.layers >= layers_min && c.layers <= layers_max && in(nodes, c.nodes);
    if (c.kind == ModelKind::Dsm) ok = ok && in(distributions, c.distribution) && in(mixture_k, c.mixture_k);
    if (c.kind == ModelKind::DeepHit) ok = ok && in(rank_alpha, c.rank_alpha);
    return ok;
  }

 private:
  template <class T, class Rng>
  static T pick(const std::vector<T>& v, Rng& rng) {
    return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
  }
};

/// Same sequence for the same seed.
inline std::vector<ModelConfig> sample_configs(const HParamGrid& g, const ModelConfig& base, std::size_t n,
                                               std::uint64_t seed) {
  g.validate();
  std::mt19937_64 rng(seed);
  std::vector<ModelConfig> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(g.sample(base, rng));
  return out;
}

inline nlohmann::json to_json(const HParamGrid& g) {
  nlohmann::json j;
  if (g.lr_values.empty()) {
    j["learning_rate"] = {g.lr_min, g.lr_max};
  } else {
    j["learning_rate_values"] = g.lr_values;
  }
  j["batch_size"] = {g.batch_min, g.batch_max};
  j["dropout"] = g.dropout;
  j["layers"] = {g.layers_min, g.layers_max};
  j["nodes"] = g.nodes;
  std::vector<std::string> d;
  for (auto x : g.distributions) d.push_back(models::distribution_name(x));
  j["distribution"] = d;
  j["mixture_k"] = g.mixture_k;
  j["rank_alpha"] = g.rank_alpha;
  return j;
}

/// Keys absent from `j` keep their `base` values.
inline HParamGrid grid_from_json(const nlohmann::json& j, HParamGrid base = {}) {
  if (!j.is_object()) throw ConfigError("grid must be a JSON object");
  HParamGrid g = std::move(base);
  try {
    for (auto& [key, v] : j.items()) {
      if (key == "learning_rate") {
        auto r = v.get<std::vector<double>>();
        if (r.size() != 2) throw ConfigError("grid.learning_rate must be [min, max]");
        g.lr_min = r[0];
        g.lr_max = r[1];
        g.lr_values.clear();
      } else if (key == "learning_rate_values") {
        g.lr_values = v.get<std::vector<double>>();
        if (g.lr_values.empty()) throw ConfigError("grid.learning_rate_values is empty");
      } else if (key == "batch_size" || key == "layers") {
        auto r = v.get<std::vector<std::size_t>>();
        if (r.size() != 2) throw ConfigError("grid." + key + " must be [min, max]");
        (key == "batch_size" ? g.batch_min : g.layers_min) = r[0];
        (key == "batch_size" ? g.batch_max : g.layers_max) = r[1];
      } else if (key == "dropout") {
        g.dropout = v.get<std::vector<double>>();
      } else if (key == "nodes") {
        g.nodes = v.get<std::vector<std::size_t>>();
      } else if (key == "distribution") {
        g.distributions.clear();
        for (auto& s : v.get<std::vector<std::string>>()) g.distributions.push_back(models::parse_distribution(s));
      } else if (key == "mixture_k") {
        g.mixture_k = v.get<std::vector<std::size_t>>();
      } else if (key == "rank_alpha") {
        g.rank_alpha = v.get<std::vector<double>>();
      } else {
        throw ConfigError("unknown grid key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("grid: ") + e.what());
  }
  g.validate();
  return g;
}

/// Search budget and protocol sizes.
struct Preset {
  std::string name;
  std::size_t n_iter = 100;
  std::size_t max_epochs = 1000;
  std::size_t folds = 5;
};

inline Preset paper_preset() { return {"paper", 100, 1000, 5}; }
inline Preset desk_preset() { return {"desk", 10, 100, 3}; }

inline Preset preset_by_name(const std::string& name) {
  if (name == "paper") return paper_preset();
  if (name == "desk") return desk_preset();
  throw ConfigError("unknown preset '" + name + "' (expected paper or desk)");
}

}  // namespace crisk::pipeline
