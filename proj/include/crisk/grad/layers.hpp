#pragma once

#include <cmath>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "crisk/grad/ops.hpp"

namespace crisk::grad {

/// Named, ordered collection of trainable parameters. Insertion order is the
/// canonical order for checkpoints and optimizer state.
class ParamGraph {
 public:
  Var add(std::string name, Tensor init) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    index_[name] = entries_.size();
    entries_.emplace_back(std::move(name), parameter(std::move(init)));
    return entries_.back().second;
  }

  /// Registers an existing parameter (shared, not copied). Used to optimise a
  /// subset of another graph.
  void adopt(std::string name, const Var& v) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    index_[name] = entries_.size();
    entries_.emplace_back(std::move(name), v);
  }

  const Var& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
    return entries_[it->second].second;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t size() const { return entries_.size(); }
  const std::vector<std::pair<std::string, Var>>& entries() const { return entries_; }
  std::vector<std::pair<std::string, Var>>& entries() { return entries_; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (auto& [_, v] : entries_) n += v.value().size();
    return n;
  }

  void zero_grad() {
    for (auto& [_, v] : entries_) v.grad().fill(0.0);
  }

  std::vector<Tensor> snapshot() const {
    std::vector<Tensor> out;
    out.reserve(entries_.size());
    for (auto& [_, v] : entries_) out.push_back(v.value());
    return out;
  }

  void restore(const std::vector<Tensor>& values) {
    if (values.size() != entries_.size()) throw ShapeError("restore: parameter count mismatch");
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (values[i].shape() != entries_[i].second.shape()) {
        throw ShapeError("restore: shape mismatch for " + entries_[i].first);
      }
      entries_[i].second.mutable_value() = values[i];
    }
  }

 private:
  std::vector<std::pair<std::string, Var>> entries_;
  std::map<std::string, std::size_t> index_;
};

inline Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng,
                             double gain = 1.0) {
  const double limit = gain * std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-limit, limit);
  Tensor w({fan_in, fan_out});
  for (auto& v : w.data()) v = u(rng);
  return w;
}

enum class Activation { ReLU, Tanh, GELU };

inline Var activate(const Var& x, Activation a) {
  switch (a) {
    case Activation::ReLU:
      return relu(x);
    case Activation::Tanh:
      return tanh(x);
    case Activation::GELU:
      return gelu(x);
  }
  return x;
}

inline Activation parse_activation(std::string_view s) {
  if (s == "relu") return Activation::ReLU;
  if (s == "tanh") return Activation::Tanh;
  if (s == "gelu") return Activation::GELU;
  throw ConfigError("unknown activation: " + std::string(s));
}

inline const char* activation_name(Activation a) {
  switch (a) {
    case Activation::ReLU:
      return "relu";
    case Activation::Tanh:
      return "tanh";
    case Activation::GELU:
      return "gelu";
  }
  return "?";
}

/// y = x W + b.
struct Linear {
  Var weight;
  Var bias;

  Linear() = default;
  Linear(ParamGraph& g, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
         double gain = 1.0)
      : weight(g.add(name + ".weight", xavier_uniform(in, out, rng, gain))),
        bias(g.add(name + ".bias", Tensor({1, out}))) {}

  Var operator()(const Var& x) const { return matmul(x, weight) + bias; }
  std::size_t in() const { return weight.value().rows(); }
  std::size_t out() const { return weight.value().cols(); }
};

/// Stack of Linear -> activation -> dropout. With no hidden layers it is the
/// identity map.
struct Mlp {
  std::vector<Linear> layers;
  Activation act = Activation::ReLU;
  double dropout_p = 0.0;

  Mlp() = default;
  Mlp(ParamGraph& g, const std::string& name, std::size_t in, const std::vector<std::size_t>& hidden,
      Activation a, double p, Rng& rng)
      : act(a), dropout_p(p) {
    std::size_t prev = in;
    for (std::size_t i = 0; i < hidden.size(); ++i) {
      layers.emplace_back(g, name + "." + std::to_string(i), prev, hidden[i], rng);
      prev = hidden[i];
    }
  }

  std::size_t out_dim(std::size_t in) const { return layers.empty() ? in : layers.back().out(); }

  Var operator()(Var x, bool training, Rng& rng) const {
    for (auto& l : layers) x = dropout(activate(l(x), act), dropout_p, rng, training);
    return x;
  }
};

struct LayerNorm {
  Var gain;
  Var bias;
  double eps = 1e-5;

  LayerNorm() = default;
  LayerNorm(ParamGraph& g, const std::string& name, std::size_t dim)
      : gain(g.add(name + ".gain", Tensor({1, dim}, 1.0))), bias(g.add(name + ".bias", Tensor({1, dim}))) {}

  Var operator()(const Var& x) const { return layer_norm_rows(x, eps) * gain + bias; }
};

/// Multi-head scaled-dot-product self-attention over the rows of a [T, D]
/// token matrix.
struct MultiHeadAttention {
  Linear q, k, v, o;
  std::size_t heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(ParamGraph& g, const std::string& name, std::size_t dim, std::size_t n_heads,
                     Rng& rng)
      : q(g, name + ".q", dim, dim, rng),
        k(g, name + ".k", dim, dim, rng),
        v(g, name + ".v", dim, dim, rng),
        o(g, name + ".o", dim, dim, rng),
        heads(n_heads) {
    if (n_heads == 0 || dim % n_heads != 0) {
      throw ConfigError("attention: embedding dim " + std::to_string(dim) +
                        " not divisible by head count " + std::to_string(n_heads));
    }
  }

  Var operator()(const Var& x) const {
    const std::size_t dim = x.value().cols();
    const std::size_t dh = dim / heads;
    const double s = 1.0 / std::sqrt(static_cast<double>(dh));
    Var qa = q(x), ka = k(x), va = v(x);
    std::vector<Var> outs;
    outs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
      Var qh = slice_cols(qa, h * dh, (h + 1) * dh);
      Var kh = slice_cols(ka, h * dh, (h + 1) * dh);
      Var vh = slice_cols(va, h * dh, (h + 1) * dh);
      Var att = softmax_rows(scale(matmul(qh, transpose(kh)), s));
      outs.push_back(matmul(att, vh));
    }
    return o(heads == 1 ? outs[0] : concat_cols(outs));
  }
};

/// Pre-norm transformer block.
struct TransformerBlock {
  LayerNorm ln1, ln2;
  MultiHeadAttention attn;
  Linear fc1, fc2;
  double dropout_p = 0.0;

  TransformerBlock() = default;
  TransformerBlock(ParamGraph& g, const std::string& name, std::size_t dim, std::size_t n_heads,
                   std::size_t mlp_hidden, Rng& rng, double p = 0.0)
      : ln1(g, name + ".ln1", dim),
        ln2(g, name + ".ln2", dim),
        attn(g, name + ".attn", dim, n_heads, rng),
        fc1(g, name + ".fc1", dim, mlp_hidden, rng),
        fc2(g, name + ".fc2", mlp_hidden, dim, rng),
        dropout_p(p) {}

  Var operator()(Var x, bool training, Rng& rng) const {
    x = x + dropout(attn(ln1(x)), dropout_p, rng, training);
    x = x + dropout(fc2(gelu(fc1(ln2(x)))), dropout_p, rng, training);
    return x;
  }
};

}  // namespace crisk::grad
