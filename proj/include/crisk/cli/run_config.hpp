#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "crisk/cohort/synthetic.hpp"
#include "crisk/mae/model.hpp"
#include "crisk/models/config.hpp"
#include "crisk/pipeline/grid.hpp"

namespace crisk::cli {

using nlohmann::json;

struct DataSection {
  std::string cohort;                          ///< cohort CSV path
  std::optional<cohort::SynthSpec> synthetic;  ///< used when no cohort path is given
  std::vector<std::string> features;           ///< feature CSVs fused in order
  std::string categories;                      ///< column -> category map for PCA
  std::string modality = "features";
};

struct FeatureSection {
  bool standardize = true;
  std::size_t pca_components = 0;  ///< 0 disables PCA
};

struct CvSection {
  std::string preset = "desk";
  std::optional<std::size_t> k;
  std::optional<std::size_t> n_iter;
  std::optional<std::size_t> max_epochs;
  std::optional<std::uint64_t> seed;  ///< defaults to the master seed
  double inner_fraction = 0.1;
  std::vector<models::ModelKind> models;  ///< empty: model.kind only
};

struct MaeSection {
  mae::MaeConfig config;
  std::string volumes;  ///< directory of .rbvl files
  std::size_t phantoms = 0;
  std::array<std::size_t, 4> phantom_dims = mae::default_phantom_dims();
  std::string checkpoint;  ///< defaults to <output>/mae.ckpt
};

struct RunConfig {
  std::uint64_t seed = 0;
  DataSection data;
  FeatureSection features;
  models::ModelConfig model;
  pipeline::HParamGrid grid;
  CvSection cv;
  MaeSection mae;
  std::string output = "out";

  std::uint64_t cv_seed() const { return cv.seed.value_or(seed); }
  std::filesystem::path output_dir() const { return output; }
  std::filesystem::path mae_checkpoint() const {
    return mae.checkpoint.empty() ? output_dir() / "mae.ckpt" : std::filesystem::path(mae.checkpoint);
  }
};

namespace detail {

inline void only_keys(const json& j, const std::string& section, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw ConfigError("config section '" + section + "' must be an object");
  for (auto& [k, _] : j.items()) {
    bool ok = false;
    for (auto* key : keys) ok = ok || k == key;
    if (!ok) throw ConfigError("unknown key '" + section + (section.empty() ? "" : ".") + k + "'");
  }
}

template <class T>
T get(const json& j, const std::string& where) {
  try {
    return j.get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config key '" + where + "': " + e.what());
  }
}

}  // namespace detail

inline json to_json(const RunConfig& c) {
  json data = {{"cohort", c.data.cohort},
               {"features", c.data.features},
               {"categories", c.data.categories},
               {"modality", c.data.modality}};
  data["synthetic"] = c.data.synthetic ? cohort::to_json(*c.data.synthetic) : json(nullptr);
  json cv = {{"preset", c.cv.preset}, {"inner_fraction", c.cv.inner_fraction}};
  auto opt = [](const auto& o) { return o ? json(*o) : json(nullptr); };
  cv["k"] = opt(c.cv.k);
  cv["n_iter"] = opt(c.cv.n_iter);
  cv["max_epochs"] = opt(c.cv.max_epochs);
  cv["seed"] = opt(c.cv.seed);
  std::vector<std::string> kinds;
  for (auto k : c.cv.models) kinds.push_back(models::kind_name(k));
  cv["models"] = kinds;
  json mae = mae::to_json(c.mae.config);
  mae["volumes"] = c.mae.volumes;
  mae["phantoms"] = c.mae.phantoms;
  mae["phantom_dims"] = c.mae.phantom_dims;
  mae["checkpoint"] = c.mae.checkpoint;
  return {{"seed", c.seed},
          {"data", data},
          {"features", {{"standardize", c.features.standardize}, {"pca_components", c.features.pca_components}}},
          {"model", models::to_json(c.model)},
          {"grid", pipeline::to_json(c.grid)},
          {"cv", cv},
          {"mae", mae},
          {"output", {{"dir", c.output}}}};
}

/// Validates the whole document before any work starts. Absent keys take
/// their defaults; null counts as absent.
inline RunConfig run_config_from_json(const json& j) {
  using detail::get;
  detail::only_keys(j, "", {"seed", "data", "features", "model", "grid", "cv", "mae", "output"});
  RunConfig c;
  auto present = [](const json& o, const char* k) { return o.contains(k) && !o.at(k).is_null(); };
  if (present(j, "seed")) c.seed = get<std::uint64_t>(j.at("seed"), "seed");

  if (present(j, "data")) {
    const auto& d = j.at("data");
    detail::only_keys(d, "data", {"cohort", "synthetic", "features", "categories", "modality"});
    if (present(d, "cohort")) c.data.cohort = get<std::string>(d.at("cohort"), "data.cohort");
    if (present(d, "synthetic")) c.data.synthetic = cohort::synth_spec_from_json(d.at("synthetic"));
    if (present(d, "features")) c.data.features = get<std::vector<std::string>>(d.at("features"), "data.features");
    if (present(d, "categories")) c.data.categories = get<std::string>(d.at("categories"), "data.categories");
    if (present(d, "modality")) c.data.modality = get<std::string>(d.at("modality"), "data.modality");
  }
  if (present(j, "features")) {
    const auto& f = j.at("features");
    detail::only_keys(f, "features", {"standardize", "pca_components"});
    if (present(f, "standardize")) c.features.standardize = get<bool>(f.at("standardize"), "features.standardize");
    if (present(f, "pca_components")) {
      c.features.pca_components = get<std::size_t>(f.at("pca_components"), "features.pca_components");
    }
  }
  if (present(j, "model")) c.model = models::model_config_from_json(j.at("model"));
  if (present(j, "grid")) c.grid = pipeline::grid_from_json(j.at("grid"));
  if (present(j, "cv")) {
    const auto& v = j.at("cv");
    detail::only_keys(v, "cv", {"preset", "k", "n_iter", "max_epochs", "seed", "inner_fraction", "models"});
    if (present(v, "preset")) c.cv.preset = get<std::string>(v.at("preset"), "cv.preset");
    if (present(v, "k")) c.cv.k = get<std::size_t>(v.at("k"), "cv.k");
    if (present(v, "n_iter")) c.cv.n_iter = get<std::size_t>(v.at("n_iter"), "cv.n_iter");
    if (present(v, "max_epochs")) c.cv.max_epochs = get<std::size_t>(v.at("max_epochs"), "cv.max_epochs");
    if (present(v, "seed")) c.cv.seed = get<std::uint64_t>(v.at("seed"), "cv.seed");
    if (present(v, "inner_fraction")) c.cv.inner_fraction = get<double>(v.at("inner_fraction"), "cv.inner_fraction");
    if (present(v, "models")) {
      for (auto& s : get<std::vector<std::string>>(v.at("models"), "cv.models")) c.cv.models.push_back(models::parse_kind(s));
    }
  }
  pipeline::preset_by_name(c.cv.preset);
  if (c.cv.k && *c.cv.k < 2) throw ConfigError("cv.k must be at least 2");
  if (c.cv.n_iter && *c.cv.n_iter == 0) throw ConfigError("cv.n_iter must be positive");
  if (!(c.cv.inner_fraction > 0.0 && c.cv.inner_fraction < 1.0)) throw ConfigError("cv.inner_fraction must lie in (0,1)");

  if (present(j, "mae")) {
    json m = j.at("mae");
    if (!m.is_object()) throw ConfigError("config section 'mae' must be an object");
    json rest = json::object();
    for (auto& [k, v] : m.items()) {
      if (v.is_null()) continue;
      if (k == "volumes") {
        c.mae.volumes = get<std::string>(v, "mae.volumes");
      } else if (k == "phantoms") {
        c.mae.phantoms = get<std::size_t>(v, "mae.phantoms");
      } else if (k == "phantom_dims") {
        auto d = get<std::vector<std::size_t>>(v, "mae.phantom_dims");
        if (d.size() != 4) throw ConfigError("mae.phantom_dims must have four entries");
        c.mae.phantom_dims = {d[0], d[1], d[2], d[3]};
      } else if (k == "checkpoint") {
        c.mae.checkpoint = get<std::string>(v, "mae.checkpoint");
      } else {
        rest[k] = v;
      }
    }
    c.mae.config = mae::mae_config_from_json(rest);
  }
  if (present(j, "output")) {
    const auto& o = j.at("output");
    detail::only_keys(o, "output", {"dir"});
    if (present(o, "dir")) c.output = get<std::string>(o.at("dir"), "output.dir");
  }
  if (c.output.empty()) throw ConfigError("output.dir must not be empty");
  return c;
}

/// Applies "a.b.c=value". The value is parsed as JSON when possible and
/// taken as a string otherwise.
inline void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
    if (!node->is_object()) {
      if (!node->is_null()) throw ConfigError("override '" + key + "' descends into a non-object");
      *node = json::object();
    }
    if (dot == std::string::npos) {
      (*node)[part] = value;
      break;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

inline json read_json_file(const std::filesystem::path& p) {
  std::ifstream is(p);
  if (!is) throw DataError("cannot read " + p.string());
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw ConfigError("malformed JSON in " + p.string() + ": " + e.what());
  }
}

/// FNV-1a over the canonical JSON text of the resolved config.
inline std::string config_hash(const RunConfig& c) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : to_json(c).dump()) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
  json doc = path.empty() ? json::object() : read_json_file(path);
  for (auto& o : overrides) apply_override(doc, o);
  return run_config_from_json(doc);
}

}  // namespace crisk::cli
