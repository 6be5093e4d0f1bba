#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <numeric>
#include <sstream>

#include "crisk/models/deephit.hpp"
#include "crisk/models/dsm.hpp"
#include "crisk/models/nfg.hpp"
#include "crisk/seed.hpp"

namespace crisk::models {

inline std::unique_ptr<CifModel> make_model(const ModelConfig& c) {
  switch (c.kind) {
    case ModelKind::Dsm:
      return std::make_unique<DsmModel>(c);
    case ModelKind::Nfg:
      return std::make_unique<NfgModel>(c);
    case ModelKind::DeepHit:
      return std::make_unique<DeepHitModel>(c);
  }
  throw ConfigError("unknown model kind");
}

struct TrainHistory {
  std::vector<double> train_loss;
  std::vector<double> valid_loss;
  /// 1-based epoch whose weights were kept (0 when nothing ran).
  std::size_t best_epoch = 0;
  double best_valid_loss = std::numeric_limits<double>::infinity();
  bool stopped_early = false;

  std::size_t epochs() const { return train_loss.size(); }
};

/// Mean loss over a whole cohort in evaluation mode.
inline double evaluate_loss(CifModel& m, const cohort::Cohort& c) {
  grad::Rng rng(0);
  return m.loss(full_batch(c), false, rng).item();
}

/// Throws DataError unless every risk has at least one event.
inline void require_events(const cohort::Cohort& c) {
  if (c.empty()) throw DataError("training cohort is empty");
  auto counts = c.stratum_counts();
  for (int r = 1; r <= c.risks(); ++r) {
    if (counts.at(static_cast<std::size_t>(r)) == 0) {
      throw DataError("no events of risk '" + c.stratum_name(r) + "' in the training cohort");
    }
  }
}

inline std::string parameter_summary(const grad::ParamGraph& g) {
  std::ostringstream os;
  for (auto& [name, v] : g.entries()) {
    double sq = 0.0;
    bool finite = true;
    for (double x : v.value().data()) {
      sq += x * x;
      finite = finite && std::isfinite(x);
    }
    os << "  " << name << " norm=" << std::sqrt(sq) << (finite ? "" : " (non-finite)") << "\n";
  }
  return os.str();
}

/// Fits `m` on `train`. With a validation cohort: one validation check per
/// epoch, stop after `patience` checks without improvement, restore the best
/// weights. Without one: exactly `epochs` epochs (default max_epochs).
inline TrainHistory train_model(CifModel& m, const cohort::Cohort& train, const cohort::Cohort* valid,
                                std::uint64_t seed, std::size_t epochs = 0) {
  require_events(train);
  if (valid && valid->empty()) throw DataError("validation cohort is empty");
  const ModelConfig& cfg = m.config();
  m.set_data_constants(train);
  m.build(train.dim(), train.risks(), derive_seed(seed, {0}));
  grad::Rng rng(derive_seed(seed, {1}));
  m.warm_start(train, rng);

  grad::AdamState opt{.lr = cfg.learning_rate, .weight_decay = cfg.weight_decay};
  const std::size_t n = train.size();
  const std::size_t bs = std::clamp<std::size_t>(cfg.batch_size, 1, n);
  const std::size_t total_epochs = valid ? cfg.max_epochs : (epochs ? epochs : cfg.max_epochs);
  const Batch valid_batch = valid ? full_batch(*valid) : Batch{};
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  TrainHistory h;
  std::vector<Tensor> best;
  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= total_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    for (std::size_t start = 0; start < n; start += bs) {
      const std::size_t stop = std::min(n, start + bs);
      Batch b = make_batch(train, std::vector<std::size_t>(order.begin() + start, order.begin() + stop));
      Var l = m.loss(b, true, rng);
      if (!std::isfinite(l.item())) {
        throw NumericError("non-finite training loss in epoch " + std::to_string(epoch) + " (rows " +
                           std::to_string(start) + "-" + std::to_string(stop) + ")\n" +
                           parameter_summary(m.params()));
      }
      grad::backward(l);
      grad::adam_step(opt, m.params());
      sum += l.item() * static_cast<double>(stop - start);
    }
    h.train_loss.push_back(sum / static_cast<double>(n));
    if (!valid) {
      h.best_epoch = epoch;
      continue;
    }
    grad::Rng eval_rng(0);
    const double vl = m.loss(valid_batch, false, eval_rng).item();
    if (!std::isfinite(vl)) {
      throw NumericError("non-finite validation loss in epoch " + std::to_string(epoch) + "\n" +
                         parameter_summary(m.params()));
    }
    h.valid_loss.push_back(vl);
    if (vl < h.best_valid_loss) {
      h.best_valid_loss = vl;
      h.best_epoch = epoch;
      best = m.params().snapshot();
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      h.stopped_early = true;
      break;
    }
  }
  if (valid && !best.empty()) m.params().restore(best);
  m.mark_fitted();
  return h;
}

inline nlohmann::json model_sidecar(const CifModel& m) {
  return {{"kind", kind_name(m.kind())},
          {"risks", m.risks()},
          {"dim", m.dim()},
          {"config", to_json(m.config())},
          {"constants", m.constants_json()}};
}

inline std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint) {
  auto p = checkpoint;
  p += ".json";
  return p;
}

/// Writes the parameter checkpoint and `<checkpoint>.json`.
inline void save_model(const CifModel& m, const std::filesystem::path& checkpoint) {
  if (!m.fitted()) throw ConfigError("refusing to save an unfitted model");
  grad::save_checkpoint(checkpoint, m.params());
  std::ofstream os(sidecar_path(checkpoint));
  if (!os) throw DataError("cannot write " + sidecar_path(checkpoint).string());
  os << model_sidecar(m).dump(2) << "\n";
}

inline std::unique_ptr<CifModel> load_model(const std::filesystem::path& checkpoint) {
  std::ifstream is(sidecar_path(checkpoint));
  if (!is) throw DataError("cannot read model sidecar " + sidecar_path(checkpoint).string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed model sidecar: " + std::string(e.what()));
  }
  auto cfg = model_config_from_json(j.at("config"));
  if (parse_kind(j.at("kind").get<std::string>()) != cfg.kind) throw DataError("sidecar kind mismatch");
  auto m = make_model(cfg);
  m->load_constants(j.at("constants"));
  m->build(j.at("dim").get<std::size_t>(), j.at("risks").get<int>(), 0);
  grad::load_checkpoint(checkpoint, m->params());
  m->mark_fitted();
  return m;
}

}  // namespace crisk::models
