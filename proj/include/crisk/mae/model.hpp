#pragma once

#include <memory>
#include <numeric>
#include <optional>

#include <json.hpp>

#include "crisk/grad/adam.hpp"
#include "crisk/grad/checkpoint.hpp"
#include "crisk/grad/layers.hpp"
#include "crisk/mae/patch.hpp"
#include "crisk/seed.hpp"

namespace crisk::mae {

using grad::Tensor;
using grad::Var;

struct MaeConfig {
  PatchSize patch;
  std::size_t dim = 64;
  std::size_t heads = 4;
  std::size_t encoder_layers = 2;
  std::size_t decoder_layers = 1;
  std::size_t decoder_dim = 32;
  std::size_t decoder_heads = 4;
  std::size_t mlp_ratio = 2;
  double mask_ratio = 0.7;
  double threshold = 0.05;
  double min_fraction = 0.10;
  double learning_rate = 1e-4;
  double weight_decay = 0.05;
  std::size_t steps = 200;
  std::size_t volumes_per_step = 1;

  void validate() const {
    if (dim == 0 || heads == 0 || dim % heads != 0) throw ConfigError("mae: dim must be a positive multiple of heads");
    if (decoder_dim == 0 || decoder_heads == 0 || decoder_dim % decoder_heads != 0) {
      throw ConfigError("mae: decoder_dim must be a positive multiple of decoder_heads");
    }
    if (dim < 4 || decoder_dim < 4) throw ConfigError("mae: embedding dims must be at least 4");
    if (encoder_layers == 0) throw ConfigError("mae: at least one encoder layer is required");
    if (mlp_ratio == 0) throw ConfigError("mae: mlp_ratio must be positive");
    if (!(mask_ratio >= 0.0 && mask_ratio <= 1.0)) throw ConfigError("mae: mask_ratio must lie in [0,1]");
    if (!(learning_rate > 0.0)) throw ConfigError("mae: learning_rate must be positive");
    if (!(weight_decay >= 0.0)) throw ConfigError("mae: weight_decay must be non-negative");
    if (volumes_per_step == 0) throw ConfigError("mae: volumes_per_step must be positive");
    if (patch.x == 0 || patch.y == 0 || patch.z == 0) throw ConfigError("mae: patch dims must be positive");
  }
};

inline nlohmann::json to_json(const MaeConfig& c) {
  return {{"patch", {c.patch.x, c.patch.y, c.patch.z}},
          {"dim", c.dim},
          {"heads", c.heads},
          {"encoder_layers", c.encoder_layers},
          {"decoder_layers", c.decoder_layers},
          {"decoder_dim", c.decoder_dim},
          {"decoder_heads", c.decoder_heads},
          {"mlp_ratio", c.mlp_ratio},
          {"mask_ratio", c.mask_ratio},
          {"threshold", c.threshold},
          {"min_fraction", c.min_fraction},
          {"learning_rate", c.learning_rate},
          {"weight_decay", c.weight_decay},
          {"steps", c.steps},
          {"volumes_per_step", c.volumes_per_step}};
}

inline MaeConfig mae_config_from_json(const nlohmann::json& j, MaeConfig c = {}) {
  if (!j.is_object()) throw ConfigError("mae config must be a JSON object");
  try {
    for (auto& [k, v] : j.items()) {
      if (k == "patch") {
        auto p = v.get<std::vector<std::size_t>>();
        if (p.size() != 3) throw ConfigError("mae.patch must have three entries");
        c.patch = {p[0], p[1], p[2]};
      } else if (k == "dim") c.dim = v.get<std::size_t>();
      else if (k == "heads") c.heads = v.get<std::size_t>();
      else if (k == "encoder_layers") c.encoder_layers = v.get<std::size_t>();
      else if (k == "decoder_layers") c.decoder_layers = v.get<std::size_t>();
      else if (k == "decoder_dim") c.decoder_dim = v.get<std::size_t>();
      else if (k == "decoder_heads") c.decoder_heads = v.get<std::size_t>();
      else if (k == "mlp_ratio") c.mlp_ratio = v.get<std::size_t>();
      else if (k == "mask_ratio") c.mask_ratio = v.get<double>();
      else if (k == "threshold") c.threshold = v.get<double>();
      else if (k == "min_fraction") c.min_fraction = v.get<double>();
      else if (k == "learning_rate") c.learning_rate = v.get<double>();
      else if (k == "weight_decay") c.weight_decay = v.get<double>();
      else if (k == "steps") c.steps = v.get<std::size_t>();
      else if (k == "volumes_per_step") c.volumes_per_step = v.get<std::size_t>();
      else throw ConfigError("unknown mae key '" + k + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("mae config: ") + e.what());
  }
  c.validate();
  return c;
}

/// Fixed sinusoidal code for a 4D patch index. x, y and z get floor(D/4)
/// channels each and the contrast index the rest. Within a group of g
/// channels, channel j is sin (j even) or cos (j odd) of pos / 10000^(2*(j/2)/g).
inline Tensor position_table(const PatchGrid& g, const std::vector<std::size_t>& ids, std::size_t dim) {
  const std::size_t q = dim / 4;
  const std::array<std::size_t, 4> width{q, q, q, dim - 3 * q};
  Tensor out({ids.size(), dim});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    const auto& idx = g.index[ids[r]];
    std::size_t col = 0;
    for (int a = 0; a < 4; ++a) {
      const double gw = static_cast<double>(width[a]);
      for (std::size_t j = 0; j < width[a]; ++j, ++col) {
        const double freq = std::pow(10000.0, -2.0 * static_cast<double>(j / 2) / gw);
        const double arg = static_cast<double>(idx[a]) * freq;
        out(r, col) = j % 2 == 0 ? std::sin(arg) : std::cos(arg);
      }
    }
  }
  return out;
}

inline Tensor gather_patches(const PatchGrid& g, const std::vector<std::size_t>& ids) {
  const std::size_t v = g.size.voxels();
  Tensor out({ids.size(), v});
  for (std::size_t r = 0; r < ids.size(); ++r)
    std::copy_n(g.values.data().begin() + static_cast<long>(ids[r] * v), v,
                out.data().begin() + static_cast<long>(r * v));
  return out;
}

/// Masked autoencoder over foreground patches: linear patch embedding plus
/// the 4D position code, a transformer encoder over visible patches, and a
/// narrower transformer decoder over visible tokens plus a learned mask
/// token at every masked position.
class MaeModel {
 public:
  struct Output {
    Var prediction;  ///< masked patches x voxels
    Var loss;
    std::size_t masked = 0;
    std::optional<std::string> warning;
  };

  MaeModel(MaeConfig c, std::uint64_t seed) : config_(std::move(c)) {
    config_.validate();
    grad::Rng rng(derive_seed(seed, {0}));
    const std::size_t pv = config_.patch.voxels();
    embed_ = grad::Linear(graph_, "mae.embed", pv, config_.dim, rng);
    for (std::size_t l = 0; l < config_.encoder_layers; ++l) {
      encoder_.emplace_back(graph_, "mae.enc" + std::to_string(l), config_.dim, config_.heads,
                            config_.mlp_ratio * config_.dim, rng);
    }
    enc_norm_ = grad::LayerNorm(graph_, "mae.enc_norm", config_.dim);
    dec_embed_ = grad::Linear(graph_, "mae.dec_embed", config_.dim, config_.decoder_dim, rng);
    std::normal_distribution<double> n(0.0, 0.02);
    Tensor tok({1, config_.decoder_dim});
    for (auto& x : tok.data()) x = n(rng);
    mask_token_ = graph_.add("mae.mask_token", tok);
    for (std::size_t l = 0; l < config_.decoder_layers; ++l) {
      decoder_.emplace_back(graph_, "mae.dec" + std::to_string(l), config_.decoder_dim, config_.decoder_heads,
                            config_.mlp_ratio * config_.decoder_dim, rng);
    }
    dec_norm_ = grad::LayerNorm(graph_, "mae.dec_norm", config_.decoder_dim);
    head_ = grad::Linear(graph_, "mae.head", config_.decoder_dim, pv, rng);
    // Predictions start at mid-grey.
    head_.bias.mutable_value().fill(0.5);
  }

  const MaeConfig& config() const { return config_; }
  grad::ParamGraph& params() { return graph_; }
  const grad::ParamGraph& params() const { return graph_; }

  PatchGrid prepare(const Volume4D& v) const {
    return mae::prepare(v, config_.patch, config_.threshold, config_.min_fraction);
  }

  /// Encoder tokens for the patches `ids` (rows in the same order). Reads
  /// nothing but those patches.
  Var encode(const PatchGrid& g, const std::vector<std::size_t>& ids) const {
    check_grid(g);
    if (ids.empty()) throw DataError("mae: nothing to encode");
    grad::Rng rng(0);
    Var x = embed_(grad::constant(gather_patches(g, ids))) + grad::constant(position_table(g, ids, config_.dim));
    for (auto& b : encoder_) x = b(x, false, rng);
    return enc_norm_(x);
  }

  Output forward(const PatchGrid& g, const MaskPlan& plan) const {
    check_grid(g);
    Output out;
    out.masked = plan.masked.size();
    if (plan.masked.empty()) {
      out.loss = grad::constant(Tensor::scalar(0.0));
      out.warning = "no masked patches; loss defined as 0";
      return out;
    }
    if (plan.visible.empty()) throw DataError("mae: mask plan leaves no visible patches");
    grad::Rng rng(0);
    Var latent = dec_embed_(encode(g, plan.visible));
    Var masked = grad::constant(Tensor({plan.masked.size(), config_.decoder_dim})) + mask_token_;
    std::vector<std::size_t> all = plan.visible;
    all.insert(all.end(), plan.masked.begin(), plan.masked.end());
    Var x = grad::concat_rows({latent, masked}) + grad::constant(position_table(g, all, config_.decoder_dim));
    for (auto& b : decoder_) x = b(x, false, rng);
    Var y = head_(dec_norm_(x));
    std::vector<std::size_t> rows(plan.masked.size());
    std::iota(rows.begin(), rows.end(), plan.visible.size());
    out.prediction = grad::gather_rows(y, rows);

    const std::size_t pv = config_.patch.voxels();
    Tensor w({plan.masked.size(), pv});
    double count = 0.0;
    for (std::size_t r = 0; r < plan.masked.size(); ++r) {
      auto valid = g.valid_voxels(plan.masked[r]);
      std::copy(valid.begin(), valid.end(), w.data().begin() + static_cast<long>(r * pv));
      count += std::accumulate(valid.begin(), valid.end(), 0.0);
    }
    Var diff = out.prediction - grad::constant(gather_patches(g, plan.masked));
    out.loss = grad::scale(grad::sum(grad::square(diff) * grad::constant(w)), 1.0 / count);
    return out;
  }

  /// Mean-pooled encoder output over all foreground patches, no masking.
  std::vector<double> embedding(const Volume4D& v) const {
    PatchGrid g = prepare(v);
    auto ids = g.foreground_ids();
    if (ids.empty()) throw DataError("mae: volume has no foreground patches");
    Tensor t = encode(g, ids).value();
    std::vector<double> out(config_.dim, 0.0);
    for (std::size_t r = 0; r < t.rows(); ++r)
      for (std::size_t c = 0; c < t.cols(); ++c) out[c] += t(r, c);
    for (auto& x : out) x /= static_cast<double>(t.rows());
    return out;
  }

  /// Volume with the masked patches replaced by their reconstruction, and
  /// the voxel region those patches cover.
  std::pair<Volume4D, std::vector<std::uint8_t>> reconstruct(const Volume4D& v, const MaskPlan& plan) const {
    PatchGrid g = prepare(v);
    auto out = forward(g, plan);
    PatchGrid marks = g;
    marks.values.fill(0.0);
    if (out.masked) {
      const Tensor& pred = out.prediction.value();
      const std::size_t pv = config_.patch.voxels();
      for (std::size_t r = 0; r < plan.masked.size(); ++r) {
        for (std::size_t k = 0; k < pv; ++k) {
          g.values(plan.masked[r], k) = std::clamp(pred(r, k), 0.0, 1.0);
          marks.values(plan.masked[r], k) = 1.0;
        }
      }
    }
    Volume4D m = unpatchify(marks);
    std::vector<std::uint8_t> region(m.voxels());
    for (std::size_t i = 0; i < region.size(); ++i) region[i] = m.data[i] > 0.5f ? 1 : 0;
    return {unpatchify(g), region};
  }

 private:
  void check_grid(const PatchGrid& g) const {
    if (!(g.size == config_.patch)) throw ShapeError("mae: grid patch size differs from the model's");
  }

  MaeConfig config_;
  grad::ParamGraph graph_;
  grad::Linear embed_, dec_embed_, head_;
  std::vector<grad::TransformerBlock> encoder_, decoder_;
  grad::LayerNorm enc_norm_, dec_norm_;
  Var mask_token_;
};

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct MaeHistory {
  std::vector<double> step_loss;
  std::vector<double> epoch_loss;  ///< mean step loss per (possibly partial) epoch
};

inline nlohmann::json to_json(const MaeHistory& h) {
  return {{"step_loss", h.step_loss}, {"epoch_loss", h.epoch_loss}};
}

inline void save_mae(const MaeModel& m, const std::filesystem::path& checkpoint) {
  grad::save_checkpoint(checkpoint, m.params());
  auto side = checkpoint;
  side += ".json";
  std::ofstream os(side);
  if (!os) throw DataError("cannot write " + side.string());
  os << nlohmann::json{{"kind", "mae"}, {"config", to_json(m.config())}}.dump(2) << "\n";
}

inline std::unique_ptr<MaeModel> load_mae(const std::filesystem::path& checkpoint) {
  auto side = checkpoint;
  side += ".json";
  std::ifstream is(side);
  if (!is) throw DataError("cannot read MAE sidecar " + side.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed MAE sidecar: ") + e.what());
  }
  if (j.value("kind", "") != "mae") throw DataError(side.string() + " is not an MAE sidecar");
  auto m = std::make_unique<MaeModel>(mae_config_from_json(j.at("config")), 0);
  grad::load_checkpoint(checkpoint, m->params());
  return m;
}

/// Mask plan for volume `v` in epoch `epoch`.
inline MaskPlan training_plan(const PatchGrid& g, double ratio, std::uint64_t seed, std::size_t epoch, std::size_t v) {
  return sample_mask(g.foreground, ratio, derive_seed(seed, {2, epoch, v}));
}

/// Mean masked-patch loss over `grids` with a fixed plan per volume.
inline double evaluate_mae(const MaeModel& m, const std::vector<PatchGrid>& grids, std::uint64_t seed) {
  if (grids.empty()) throw DataError("mae: empty evaluation set");
  double sum = 0.0;
  for (std::size_t i = 0; i < grids.size(); ++i) {
    sum += m.forward(grids[i], sample_mask(grids[i].foreground, m.config().mask_ratio, derive_seed(seed, {i})))
               .loss.item();
  }
  return sum / static_cast<double>(grids.size());
}

/// Adam over `config.steps` steps. Each epoch visits the volumes in a
/// seed-derived order with a fresh mask per volume; a step averages the
/// loss of `volumes_per_step` consecutive volumes. On a non-finite loss the
/// last good parameters are restored (and written to `last_good` if given)
/// before throwing.
inline MaeHistory train_mae(MaeModel& m, const std::vector<PatchGrid>& grids, std::uint64_t seed,
                            const std::filesystem::path& last_good = {}) {
  if (grids.empty()) throw DataError("mae: empty training set");
  for (auto& g : grids)
    if (g.foreground_ids().empty()) throw DataError("mae: a training volume has no foreground patches");
  const auto& cfg = m.config();
  grad::AdamState opt{.lr = cfg.learning_rate, .weight_decay = cfg.weight_decay};
  MaeHistory h;
  std::vector<std::size_t> order(grids.size());
  std::size_t epoch = 0, pos = grids.size();
  bool started = false;
  double epoch_sum = 0.0;
  std::size_t epoch_steps = 0;
  auto close_epoch = [&] {
    if (epoch_steps) h.epoch_loss.push_back(epoch_sum / static_cast<double>(epoch_steps));
    epoch_sum = 0.0;
    epoch_steps = 0;
  };
  auto abort = [&](const std::vector<Tensor>& good, const std::string& what) {
    m.params().restore(good);
    if (!last_good.empty()) save_mae(m, last_good);
    throw NumericError("mae: " + what + (last_good.empty() ? "" : "; last good weights written to " + last_good.string()));
  };
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const auto good = m.params().snapshot();
    Var loss;
    for (std::size_t b = 0; b < cfg.volumes_per_step; ++b) {
      if (pos == grids.size()) {
        if (started) {
          close_epoch();
          ++epoch;
        }
        started = true;
        std::iota(order.begin(), order.end(), 0);
        std::mt19937_64 rng(derive_seed(seed, {1, epoch}));
        std::shuffle(order.begin(), order.end(), rng);
        pos = 0;
      }
      const std::size_t v = order[pos++];
      Var l = m.forward(grids[v], training_plan(grids[v], cfg.mask_ratio, seed, epoch, v)).loss;
      loss = b == 0 ? l : loss + l;
    }
    loss = grad::scale(loss, 1.0 / static_cast<double>(cfg.volumes_per_step));
    if (!std::isfinite(loss.item())) abort(good, "non-finite loss at step " + std::to_string(step));
    grad::backward(loss);
    grad::adam_step(opt, m.params());
    h.step_loss.push_back(loss.item());
    epoch_sum += loss.item();
    ++epoch_steps;
    for (auto& [_, p] : m.params().entries())
      for (double x : p.value().data())
        if (!std::isfinite(x)) abort(good, "non-finite parameters after step " + std::to_string(step));
  }
  close_epoch();
  return h;
}

inline std::vector<PatchGrid> prepare_all(const MaeModel& m, const std::vector<Volume4D>& volumes) {
  std::vector<PatchGrid> out;
  out.reserve(volumes.size());
  for (auto& v : volumes) out.push_back(m.prepare(v));
  return out;
}

}  // namespace crisk::mae
