#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>

#include "crisk/models/cif_model.hpp"

namespace crisk::models {

/// Deep Survival Machines. Each risk r is a mixture of k primitive
/// distributions (Weibull or log-normal) whose shape/scale are base values
/// plus encoder-conditioned shifts, mapped through softplus. One softmax over
/// all R*k gate logits gives component weights w_{r,j}; the within-risk
/// weights pi_{r,j} = w_{r,j} / sum_j w_{r,j} sum to one and the risk mass
/// sum_j w_{r,j} caps F_r(inf|x), so that sum_r F_r <= 1.
class DsmModel : public CifModel {
 public:
  struct Primitives {
    Tensor shape;       ///< n x R*k
    Tensor scale;       ///< n x R*k, rescaled time units
    Tensor log_weight;  ///< n x R*k, joint log-softmax
  };

  explicit DsmModel(ModelConfig c) : CifModel(std::move(c)) { config_.kind = ModelKind::Dsm; }

  double time_scale() const { return time_scale_; }
  void set_time_scale(double s) {
    if (!(s > 0.0) || !std::isfinite(s)) throw ConfigError("time scale must be positive");
    time_scale_ = s;
  }

  void set_data_constants(const cohort::Cohort& train) override {
    const double m = train.max_time();
    if (!(m > 0.0)) throw DataError("training cohort has no positive times");
    set_time_scale(m);
  }

  std::size_t components() const { return config_.mixture_k; }

  Primitives primitives(const Tensor& X) const {
    require_built();
    grad::Rng rng(0);
    auto p = forward(grad::constant(X), false, rng, false);
    return {p.shape.value(), p.scale.value(), p.log_weight.value()};
  }

  /// Within-risk mixture weights pi_{r,j}(x): n x k, rows sum to one.
  Tensor gates(const Tensor& X, int r) const {
    auto p = primitives(X);
    const std::size_t k = components(), n = X.rows();
    Tensor out({n, k});
    for (std::size_t i = 0; i < n; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < k; ++j) mx = std::max(mx, p.log_weight(i, (r - 1) * k + j));
      double s = 0.0;
      for (std::size_t j = 0; j < k; ++j) s += out(i, j) = std::exp(p.log_weight(i, (r - 1) * k + j) - mx);
      for (std::size_t j = 0; j < k; ++j) out(i, j) /= s;
    }
    return out;
  }

  Var loss(const Batch& b, bool training, grad::Rng& rng) override {
    check_batch(b);
    return nll(b, forward(grad::constant(b.x), training, rng, false));
  }

  /// Likelihood of the covariate-free model (base parameters and gate bias
  /// only).
  Var covariate_free_loss(const Batch& b) {
    check_batch(b);
    grad::Rng rng(0);
    return nll(b, forward(grad::constant(b.x), false, rng, true));
  }

  /// Covariate-free maximum likelihood over base shape/scale and the gate
  /// bias, full batch. Stops once the loss moves by less than 1e-6 on three
  /// consecutive iterations.
  void warm_start(const cohort::Cohort& train, grad::Rng&) override {
    if (config_.warmup_iterations == 0) return;
    grad::ParamGraph sub;
    sub.adopt("dsm.base_shape", graph_.get("dsm.base_shape"));
    sub.adopt("dsm.base_scale", graph_.get("dsm.base_scale"));
    sub.adopt("dsm.gate.bias", graph_.get("dsm.gate.bias"));
    grad::AdamState opt{.lr = config_.warmup_learning_rate};
    const Batch b = full_batch(train);
    double last = std::numeric_limits<double>::infinity();
    int flat = 0;
    for (std::size_t it = 0; it < config_.warmup_iterations; ++it) {
      Var l = covariate_free_loss(b);
      if (!std::isfinite(l.item())) {
        throw NumericError("DSM warm-up: non-finite loss at iteration " + std::to_string(it));
      }
      grad::backward(l);
      grad::adam_step(opt, sub);
      flat = std::abs(last - l.item()) < 1e-6 ? flat + 1 : 0;
      if (flat == 3) break;
      last = l.item();
    }
    graph_.zero_grad();
  }

  nlohmann::json constants_json() const override { return {{"time_scale", time_scale_}}; }
  void load_constants(const nlohmann::json& j) override { set_time_scale(j.at("time_scale").get<double>()); }

 protected:
  void do_build(grad::Rng& rng) override {
    const std::size_t k = components(), rk = static_cast<std::size_t>(risks_) * k;
    encoder_ = grad::Mlp(graph_, "dsm.encoder", dim_, std::vector<std::size_t>(config_.layers, config_.nodes),
                         config_.activation, config_.dropout, rng);
    const std::size_t h = encoder_.out_dim(dim_);
    gate_ = grad::Linear(graph_, "dsm.gate", h, rk, rng);
    shape_shift_ = grad::Linear(graph_, "dsm.shape_shift", h, rk, rng);
    scale_shift_ = grad::Linear(graph_, "dsm.scale_shift", h, rk, rng);
    // Heads start at zero so the network begins at the warm-up solution.
    for (auto* l : {&gate_, &shape_shift_, &scale_shift_}) l->weight.mutable_value().fill(0.0);
    std::normal_distribution<double> jitter(0.0, 0.1);
    Tensor shape({1, rk}), scale({1, rk});
    const double inv1 = softplus_inverse_vec(1, 1.0)[0];
    for (std::size_t i = 0; i < rk; ++i) {
      shape[i] = inv1 + jitter(rng);
      scale[i] = inv1 + jitter(rng);
    }
    base_shape_ = graph_.add("dsm.base_shape", shape);
    base_scale_ = graph_.add("dsm.base_scale", scale);
  }

  Tensor do_cif(const Tensor& X, std::span<const double> times, int r) const override {
    auto p = primitives(X);
    const std::size_t k = components(), n = X.rows(), m = times.size();
    Tensor out({n, m});
    const bool weibull = config_.distribution == Distribution::Weibull;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < m; ++c) {
        const double t = times[c] / time_scale_;
        if (t == 0.0) continue;
        double f = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
          const std::size_t col = (r - 1) * k + j;
          const double shape = p.shape(i, col), scale = p.scale(i, col);
          const double g = weibull ? -std::expm1(-std::pow(t / scale, shape))
                                   : grad::kernel::normal_cdf((std::log(t) - std::log(scale)) / shape);
          f += std::exp(p.log_weight(i, col)) * g;
        }
        out(i, c) = std::clamp(f, 0.0, 1.0);
      }
    }
    return out;
  }

 private:
  struct Graph {
    Var shape, scale, log_weight;
  };

  Graph forward(const Var& x, bool training, grad::Rng& rng, bool covariate_free) const {
    if (covariate_free) {
      return {grad::softplus(base_shape_), grad::softplus(base_scale_),
              grad::log_softmax_rows(gate_.bias)};
    }
    Var e = encoder_(x, training, rng);
    return {grad::softplus(base_shape_ + shape_shift_(e)), grad::softplus(base_scale_ + scale_shift_(e)),
            grad::log_softmax_rows(gate_(e))};
  }

  Var nll(const Batch& b, const Graph& p) {
    const std::size_t n = b.size(), k = components();
    Tensor lt({n, 1});
    for (std::size_t i = 0; i < n; ++i) lt[i] = std::log(std::max(b.time[i] / time_scale_, 1e-10));
    Var logt = grad::constant(lt);
    Var log_f, log_s;
    if (config_.distribution == Distribution::Weibull) {
      Var u = p.shape * (logt - grad::log(p.scale));
      Var hz = grad::exp(u);
      log_s = -hz;
      log_f = grad::log(p.shape) - logt + u - hz;
    } else {
      Var z = (logt - grad::log(p.scale)) / p.shape;
      log_s = grad::log_normal_sf(z);
      log_f = -logt - grad::log(p.shape) - 0.5 * grad::square(z) - 0.5 * std::log(2.0 * std::numbers::pi);
    }
    // Density in original time units.
    log_f = log_f - std::log(time_scale_);
    Var a = p.log_weight + log_f;
    std::vector<Var> per_risk;
    for (int r = 0; r < risks_; ++r) {
      per_risk.push_back(grad::logsumexp_rows(grad::slice_cols(a, r * k, (r + 1) * k)));
    }
    Var lf = risks_ == 1 ? per_risk[0] : grad::concat_cols(per_risk);
    Var event_ll = grad::pick_cols(lf, risk_columns(b));
    // log(1 - sum_r F_r) = log sum_{r,j} w_{r,j} S_{r,j}
    Var censored_ll = grad::logsumexp_rows(p.log_weight + log_s);
    return masked_nll(b, event_ll, censored_ll);
  }

  double time_scale_ = 1.0;
  grad::Mlp encoder_;
  grad::Linear gate_, shape_shift_, scale_shift_;
  Var base_shape_, base_scale_;
};

}  // namespace crisk::models
