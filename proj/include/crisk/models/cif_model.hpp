#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "crisk/cohort/cohort.hpp"
#include "crisk/error.hpp"
#include "crisk/grad.hpp"
#include "crisk/models/config.hpp"

namespace crisk::models {

using grad::Tensor;
using grad::Var;

/// Training rows in model-ready form.
struct Batch {
  Tensor x;
  std::vector<double> time;
  std::vector<int> event;

  std::size_t size() const { return time.size(); }
};

inline Batch make_batch(const cohort::Cohort& c, const std::vector<std::size_t>& idx) {
  Batch b;
  b.x = Tensor({idx.size(), c.dim()});
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const auto& s = c.subjects.at(idx[r]);
    std::copy(s.x.begin(), s.x.end(), b.x.row_span(r).begin());
    b.time.push_back(s.time);
    b.event.push_back(s.event);
  }
  return b;
}

inline Batch full_batch(const cohort::Cohort& c) {
  std::vector<std::size_t> idx(c.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return make_batch(c, idx);
}

struct Diagnostics {
  /// NFG event densities that fell below the clamp floor.
  std::size_t clamped_densities = 0;
  std::vector<std::string> warnings;
};

/// Common contract of the competing-risk models: after fitting, F_r(t|x) for
/// risks r = 1..R. Lifecycle: set data constants (time scale or bins) ->
/// build(d, R, seed) -> optional warm start -> training -> mark_fitted().
class CifModel {
 public:
  explicit CifModel(ModelConfig c) : config_(std::move(c)) {}
  virtual ~CifModel() = default;
  CifModel(const CifModel&) = delete;
  CifModel& operator=(const CifModel&) = delete;

  ModelKind kind() const { return config_.kind; }
  const ModelConfig& config() const { return config_; }
  int risks() const { return risks_; }
  std::size_t dim() const { return dim_; }
  bool built() const { return built_; }
  bool fitted() const { return fitted_; }
  void mark_fitted() {
    require_built();
    fitted_ = true;
  }

  /// Data-dependent constants derived from the training cohort only.
  virtual void set_data_constants(const cohort::Cohort& train) = 0;

  /// Allocates and initialises all parameters.
  void build(std::size_t d, int R, std::uint64_t seed) {
    if (d == 0) throw ConfigError("model needs at least one feature");
    if (R < 1) throw ConfigError("model needs at least one risk");
    dim_ = d;
    risks_ = R;
    graph_ = grad::ParamGraph{};
    grad::Rng rng(seed);
    do_build(rng);
    built_ = true;
    fitted_ = false;
  }

  /// Optional pretraining before the main loop.
  virtual void warm_start(const cohort::Cohort&, grad::Rng&) {}

  /// Mean negative log-likelihood (plus any model-specific penalty) of a batch.
  virtual Var loss(const Batch& b, bool training, grad::Rng& rng) = 0;

  /// n x m matrix of F_r(times[j] | X row i); r is 1-based.
  Tensor cif(const Tensor& X, std::span<const double> times, int r) const {
    if (!fitted_) throw ConfigError("model is not fitted");
    if (X.rank() != 2 || X.cols() != dim_) {
      throw ShapeError("cif: expected n x " + std::to_string(dim_) + " features, got " +
                       grad::shape_str(X.shape()));
    }
    if (r < 1 || r > risks_) throw ConfigError("cif: risk " + std::to_string(r) + " out of range");
    for (double t : times) {
      if (!(t >= 0.0)) throw DataError("cif: time must be non-negative, got " + std::to_string(t));
    }
    return do_cif(X, times, r);
  }

  double cif(std::span<const double> x, double t, int r) const {
    Tensor X({1, x.size()}, std::vector<double>(x.begin(), x.end()));
    const double ts[1] = {t};
    return cif(X, ts, r)[0];
  }

  grad::ParamGraph& params() { return graph_; }
  const grad::ParamGraph& params() const { return graph_; }

  Diagnostics& diagnostics() { return diag_; }
  const Diagnostics& diagnostics() const { return diag_; }

  /// Model-specific constants for the checkpoint sidecar.
  virtual nlohmann::json constants_json() const = 0;
  virtual void load_constants(const nlohmann::json& j) = 0;

 protected:
  virtual void do_build(grad::Rng& rng) = 0;
  virtual Tensor do_cif(const Tensor& X, std::span<const double> times, int r) const = 0;

  void require_built() const {
    if (!built_) throw ConfigError("model has not been built");
  }

  void check_batch(const Batch& b) const {
    require_built();
    if (b.size() == 0) throw DataError("empty batch");
    if (b.x.cols() != dim_ || b.x.rows() != b.size()) throw ShapeError("batch shape mismatch");
    for (int e : b.event) {
      if (e < 0 || e > risks_) throw DataError("event code " + std::to_string(e) + " out of range");
    }
  }

  /// 0-based risk column per row (0 for censored rows, which are masked).
  static std::vector<std::size_t> risk_columns(const Batch& b, std::size_t width = 1,
                                               const std::vector<std::size_t>* offset = nullptr) {
    std::vector<std::size_t> out(b.size());
    for (std::size_t i = 0; i < b.size(); ++i) {
      const std::size_t r = b.event[i] > 0 ? static_cast<std::size_t>(b.event[i] - 1) : 0;
      out[i] = r * width + (offset ? (*offset)[i] : 0);
    }
    return out;
  }

  ModelConfig config_;
  std::size_t dim_ = 0;
  int risks_ = 0;
  bool built_ = false;
  bool fitted_ = false;
  grad::ParamGraph graph_;
  Diagnostics diag_;
};

/// Combines event and censored per-row log-likelihood columns into the mean
/// negative log-likelihood.
inline Var masked_nll(const Batch& b, const Var& event_ll, const Var& censored_ll) {
  Tensor me({b.size(), 1}), mc({b.size(), 1});
  for (std::size_t i = 0; i < b.size(); ++i) (b.event[i] > 0 ? me : mc)[i] = 1.0;
  Var ll = event_ll * grad::constant(std::move(me)) + censored_ll * grad::constant(std::move(mc));
  return -grad::mean(ll);
}

inline std::vector<double> softplus_inverse_vec(std::size_t n, double y) {
  return std::vector<double>(n, y + std::log(-std::expm1(-y)));
}

}  // namespace crisk::models
