#pragma once

#include <algorithm>
#include <cmath>

#include "crisk/models/cif_model.hpp"

namespace crisk::models {

/// Upper bin edges from type-7 quantiles of the observed times at l/L,
/// l = 1..L. Coincident or non-positive edges are merged, so the result is
/// strictly increasing and may have fewer than L entries.
inline std::vector<double> quantile_boundaries(std::vector<double> times, std::size_t L) {
  if (times.empty()) throw DataError("cannot derive time bins from an empty cohort");
  if (L == 0) throw ConfigError("bins must be positive");
  std::sort(times.begin(), times.end());
  std::vector<double> out;
  const double n = static_cast<double>(times.size());
  for (std::size_t l = 1; l <= L; ++l) {
    const double h = (n - 1.0) * static_cast<double>(l) / static_cast<double>(L);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, times.size() - 1);
    double q = times[lo] + (h - static_cast<double>(lo)) * (times[hi] - times[lo]);
    if (l == L) q = times.back();
    if (q > 0.0 && (out.empty() || q > out.back())) out.push_back(q);
  }
  if (out.empty()) throw DataError("all observed times are zero; cannot derive time bins");
  return out;
}

/// Index of the bin holding t: first l with t <= edges[l]; past the last edge
/// maps to the last bin.
inline std::size_t bin_index(const std::vector<double>& edges, double t) {
  auto it = std::lower_bound(edges.begin(), edges.end(), t);
  return it == edges.end() ? edges.size() - 1 : static_cast<std::size_t>(it - edges.begin());
}

/// Pairwise ranking penalty on joint bin probabilities y (n x R*L, risk-major
/// columns). For each comparable pair (e_i = r, t_i < t_j) with b = bin(t_i):
/// exp(-(F_r(b|x_i) - F_r(b|x_j)) / sigma), averaged over all pairs. Returns
/// zero when the batch has no comparable pair.
inline Var ranking_loss(const Var& y, const std::vector<double>& time, const std::vector<int>& event,
                        const std::vector<std::size_t>& bins, std::size_t R, std::size_t L, double sigma) {
  const std::size_t n = time.size();
  const auto& Y = y.value();
  if (Y.rows() != n || Y.cols() != R * L) throw ShapeError("ranking_loss: shape mismatch");
  // C[j][r*L + l] = sum_{l' <= l} y[j, r*L + l']
  Tensor C({n, R * L});
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t r = 0; r < R; ++r) {
      double acc = 0.0;
      for (std::size_t l = 0; l < L; ++l) C(j, r * L + l) = acc += Y(j, r * L + l);
    }
  // Visits every comparable pair (i, j) with its CIF column.
  auto for_pairs = [time, event, bins, n, L](auto&& f) {
    for (std::size_t i = 0; i < n; ++i) {
      if (event[i] <= 0) continue;
      const std::size_t col = static_cast<std::size_t>(event[i] - 1) * L + bins[i];
      for (std::size_t j = 0; j < n; ++j)
        if (time[i] < time[j]) f(i, j, col);
    }
  };
  double total = 0.0;
  std::size_t count = 0;
  for_pairs([&](std::size_t i, std::size_t j, std::size_t col) {
    total += std::exp(-(C(i, col) - C(j, col)) / sigma);
    ++count;
  });
  if (count == 0) return grad::constant(0.0);
  const double inv = 1.0 / static_cast<double>(count);
  return grad::record(Tensor::scalar(total * inv), {y}, [C, for_pairs, inv, sigma, n, R, L](grad::Node& nd) {
    grad::Node& p = *nd.parents[0];
    p.ensure_grad();
    const double g = nd.grad[0] * inv / sigma;
    Tensor gc({n, R * L});
    for_pairs([&](std::size_t i, std::size_t j, std::size_t col) {
      const double eta = std::exp(-(C(i, col) - C(j, col)) / sigma);
      gc(i, col) -= g * eta;
      gc(j, col) += g * eta;
    });
    // Cumulative sum transposed: dC[l]/dy[l'] = 1 for l' <= l.
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t r = 0; r < R; ++r) {
        double acc = 0.0;
        for (std::size_t l = L; l-- > 0;) {
          acc += gc(j, r * L + l);
          p.grad(j, r * L + l) += acc;
        }
      }
  });
}

/// DeepHit: shared encoder E, one subnetwork H_q per risk fed with
/// concat(E(x), x), joint softmax over all L*R outputs.
class DeepHitModel : public CifModel {
 public:
  explicit DeepHitModel(ModelConfig c) : CifModel(std::move(c)) { config_.kind = ModelKind::DeepHit; }

  const std::vector<double>& boundaries() const { return edges_; }
  std::size_t bins() const { return edges_.size(); }

  void set_boundaries(std::vector<double> edges) {
    if (edges.empty()) throw ConfigError("DeepHit needs at least one bin");
    for (std::size_t l = 0; l < edges.size(); ++l) {
      if (!(edges[l] > (l ? edges[l - 1] : 0.0)) || !std::isfinite(edges[l])) {
        throw ConfigError("DeepHit bin boundaries must be positive and strictly increasing");
      }
    }
    edges_ = std::move(edges);
  }

  void set_data_constants(const cohort::Cohort& train) override {
    auto edges = quantile_boundaries(train.times(), config_.bins);
    if (edges.size() < config_.bins) {
      diag_.warnings.push_back("merged " + std::to_string(config_.bins - edges.size()) +
                               " empty time bins; using " + std::to_string(edges.size()));
    }
    set_boundaries(std::move(edges));
  }

  /// Joint bin probabilities y(x): n x R*L, risk-major columns; rows sum to one.
  Tensor probabilities(const Tensor& X) const {
    require_built();
    grad::Rng rng(0);
    return grad::softmax_rows(logits(grad::constant(X), false, rng)).value();
  }

  Var loss(const Batch& b, bool training, grad::Rng& rng) override {
    check_batch(b);
    const std::size_t n = b.size(), L = bins(), R = static_cast<std::size_t>(risks_);
    std::vector<std::size_t> bin(n);
    for (std::size_t i = 0; i < n; ++i) bin[i] = bin_index(edges_, b.time[i]);
    Var log_y = grad::log_softmax_rows(logits(grad::constant(b.x), training, rng));
    Var event_ll = grad::pick_cols(log_y, risk_columns(b, L, &bin));
    // Censored at t in bin l: the event happens in bin l or later.
    Tensor mask({n, R * L});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t r = 0; r < R; ++r)
        for (std::size_t l = 0; l < bin[i]; ++l) mask(i, r * L + l) = -std::numeric_limits<double>::infinity();
    Var censored_ll = grad::logsumexp_rows(log_y + grad::constant(std::move(mask)));
    Var nll = masked_nll(b, event_ll, censored_ll);
    if (config_.rank_alpha == 0.0) return nll;
    Var rank = ranking_loss(grad::exp(log_y), b.time, b.event, bin, R, L, config_.rank_sigma);
    return nll + config_.rank_alpha * rank;
  }

  nlohmann::json constants_json() const override { return {{"boundaries", edges_}}; }
  void load_constants(const nlohmann::json& j) override {
    set_boundaries(j.at("boundaries").get<std::vector<double>>());
  }

 protected:
  void do_build(grad::Rng& rng) override {
    if (edges_.empty()) throw ConfigError("DeepHit bin boundaries must be set before build");
    encoder_ = grad::Mlp(graph_, "deephit.encoder", dim_,
                         std::vector<std::size_t>(config_.layers, config_.nodes), config_.activation,
                         config_.dropout, rng);
    const std::size_t in = encoder_.out_dim(dim_) + dim_;
    subnets_.clear();
    heads_.clear();
    for (int q = 0; q < risks_; ++q) {
      const std::string name = "deephit.h" + std::to_string(q + 1);
      subnets_.emplace_back(graph_, name, in, std::vector<std::size_t>(config_.subnet_layers, config_.nodes),
                            config_.activation, config_.dropout, rng);
      heads_.emplace_back(graph_, name + ".out", subnets_.back().out_dim(in), bins(), rng);
    }
  }

  Tensor do_cif(const Tensor& X, std::span<const double> times, int r) const override {
    Tensor y = probabilities(X);
    const std::size_t n = X.rows(), m = times.size(), L = bins();
    Tensor out({n, m});
    for (std::size_t c = 0; c < m; ++c) {
      if (times[c] == 0.0) continue;
      const std::size_t b = bin_index(edges_, times[c]);
      for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t l = 0; l <= b; ++l) acc += y(i, (r - 1) * L + l);
        out(i, c) = std::min(acc, 1.0);
      }
    }
    return out;
  }

 private:
  Var logits(const Var& x, bool training, grad::Rng& rng) const {
    Var in = grad::concat_cols({encoder_(x, training, rng), x});
    std::vector<Var> parts;
    for (std::size_t q = 0; q < subnets_.size(); ++q) parts.push_back(heads_[q](subnets_[q](in, training, rng)));
    return parts.size() == 1 ? parts[0] : grad::concat_cols(parts);
  }

  std::vector<double> edges_;
  grad::Mlp encoder_;
  std::vector<grad::Mlp> subnets_;
  std::vector<grad::Linear> heads_;
};

}  // namespace crisk::models
