#pragma once

#include <cmath>

#include "crisk/models/cif_model.hpp"

namespace crisk::models {

/// Positive monotone network M(t, e) used by NFG. Every weight on a path from
/// the t input is squared before use and the hidden activations are tanh, so
/// M is non-decreasing in t; the final softplus keeps it strictly positive.
/// Forward mode carries dM/dt alongside the value.
struct MonotoneNet {
  Var w_t, b_in;
  grad::Linear embed;
  std::vector<Var> w_hidden, b_hidden;
  Var w_out, b_out;

  MonotoneNet() = default;
  MonotoneNet(grad::ParamGraph& g, const std::string& name, std::size_t emb_dim, std::size_t layers,
              std::size_t nodes, grad::Rng& rng) {
    if (layers == 0 || nodes == 0) throw ConfigError("monotone network needs at least one layer");
    w_t = g.add(name + ".t", grad::xavier_uniform(1, nodes, rng));
    b_in = g.add(name + ".bias", Tensor({1, nodes}));
    embed = grad::Linear(g, name + ".embed", emb_dim, nodes, rng);
    for (std::size_t l = 1; l < layers; ++l) {
      w_hidden.push_back(g.add(name + ".w" + std::to_string(l), grad::xavier_uniform(nodes, nodes, rng)));
      b_hidden.push_back(g.add(name + ".b" + std::to_string(l), Tensor({1, nodes})));
    }
    w_out = g.add(name + ".out", grad::xavier_uniform(nodes, 1, rng));
    b_out = g.add(name + ".out_bias", Tensor({1, 1}));
  }

  struct Result {
    Var value;  ///< n x 1, M(t, e) > 0
    Var dt;     ///< n x 1, dM/dt >= 0 (only when requested)
  };

  Result operator()(const Var& t, const Var& e, bool tangent) const {
    Var wt = grad::square(w_t);
    Var h = grad::tanh(t * wt + embed(e) + b_in);
    Var dh;
    if (tangent) dh = (1.0 - grad::square(h)) * wt;
    for (std::size_t l = 0; l < w_hidden.size(); ++l) {
      Var w = grad::square(w_hidden[l]);
      h = grad::tanh(grad::matmul(h, w) + b_hidden[l]);
      if (tangent) dh = (1.0 - grad::square(h)) * grad::matmul(dh, w);
    }
    Var wo = grad::square(w_out);
    Var pre = grad::matmul(h, wo) + b_out;
    Result r{grad::softplus(pre), Var()};
    if (tangent) r.dt = grad::sigmoid(pre) * grad::matmul(dh, wo);
    return r;
  }
};

/// Neural Fine-Gray: F_r(t|x) = B(E(x))_r (1 - exp(-t M_r(t, E(x)))).
class NfgModel : public CifModel {
 public:
  static constexpr double kDensityFloor = 1e-12;

  explicit NfgModel(ModelConfig c) : CifModel(std::move(c)) { config_.kind = ModelKind::Nfg; }

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

  /// Balance weights B(E(x)): n x R, rows sum to one.
  Tensor balance(const Tensor& X) const {
    require_built();
    grad::Rng rng(0);
    return grad::softmax_rows(balance_(encoder_(grad::constant(X), false, rng))).value();
  }

  /// M_r(t_i, E(x_i)) and d(t M_r)/dt per row (one time per row); the
  /// derivative is in original time units.
  struct MonotoneEval {
    Tensor m, dtm;
  };
  MonotoneEval monotone(const Tensor& X, std::span<const double> t, int r) const {
    require_built();
    grad::Rng rng(0);
    Var e = encoder_(grad::constant(X), false, rng);
    Tensor tc({X.rows(), 1}, std::vector<double>(t.begin(), t.end()));
    for (auto& v : tc.data()) v /= time_scale_;
    Var tv = grad::constant(tc);
    auto res = nets_.at(r - 1)(tv, e, true);
    Var dtm = res.value + tv * res.dt;
    Tensor d = dtm.value();
    for (auto& v : d.data()) v /= time_scale_;
    return {res.value.value(), d};
  }

  Var loss(const Batch& b, bool training, grad::Rng& rng) override {
    check_batch(b);
    const std::size_t n = b.size();
    Tensor tc({n, 1});
    for (std::size_t i = 0; i < n; ++i) tc[i] = b.time[i] / time_scale_;
    Var t = grad::constant(tc);
    Var e = encoder_(grad::constant(b.x), training, rng);
    Var log_b = grad::log_softmax_rows(balance_(e));
    std::vector<Var> tm, dtm;
    for (int r = 0; r < risks_; ++r) {
      auto res = nets_[r](t, e, true);
      tm.push_back(t * res.value);
      dtm.push_back(res.value + t * res.dt);
    }
    Var TM = risks_ == 1 ? tm[0] : grad::concat_cols(tm);
    Var DTM = risks_ == 1 ? dtm[0] : grad::concat_cols(dtm);
    const auto cols = risk_columns(b);
    for (std::size_t i = 0; i < n; ++i) {
      if (b.event[i] > 0 && !(DTM.value()(i, cols[i]) >= kDensityFloor)) ++diag_.clamped_densities;
    }
    Var dens = grad::log(grad::clamp_min(DTM, kDensityFloor));
    Var event_ll = grad::pick_cols(log_b - TM + dens, cols) - std::log(time_scale_);
    Var censored_ll = grad::logsumexp_rows(log_b - TM);
    return masked_nll(b, event_ll, censored_ll);
  }

  nlohmann::json constants_json() const override { return {{"time_scale", time_scale_}}; }
  void load_constants(const nlohmann::json& j) override { set_time_scale(j.at("time_scale").get<double>()); }

 protected:
  void do_build(grad::Rng& rng) override {
    encoder_ = grad::Mlp(graph_, "nfg.encoder", dim_, std::vector<std::size_t>(config_.layers, config_.nodes),
                         config_.activation, config_.dropout, rng);
    const std::size_t h = encoder_.out_dim(dim_);
    balance_ = grad::Linear(graph_, "nfg.balance", h, static_cast<std::size_t>(risks_), rng);
    nets_.clear();
    for (int r = 0; r < risks_; ++r) {
      nets_.emplace_back(graph_, "nfg.m" + std::to_string(r + 1), h, config_.monotone_layers,
                         config_.monotone_nodes, rng);
    }
  }

  Tensor do_cif(const Tensor& X, std::span<const double> times, int r) const override {
    grad::Rng rng(0);
    const std::size_t n = X.rows(), m = times.size();
    Var e = encoder_(grad::constant(X), false, rng);
    Tensor bal = grad::softmax_rows(balance_(e)).value();
    Tensor out({n, m});
    for (std::size_t c = 0; c < m; ++c) {
      const double t = times[c] / time_scale_;
      if (t == 0.0) continue;
      Var tv = grad::constant(Tensor({n, 1}, t));
      Tensor mv = nets_[r - 1](tv, e, false).value.value();
      for (std::size_t i = 0; i < n; ++i) out(i, c) = bal(i, r - 1) * -std::expm1(-t * mv[i]);
    }
    return out;
  }

 private:
  double time_scale_ = 1.0;
  grad::Mlp encoder_;
  grad::Linear balance_;
  std::vector<MonotoneNet> nets_;
};

}  // namespace crisk::models
