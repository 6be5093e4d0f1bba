#pragma once

#include <cmath>
#include <vector>

#include "crisk/grad/layers.hpp"

namespace crisk::grad {

/// Adam with decoupled weight decay. Moment buffers are created lazily on the
/// first step and follow the ParamGraph insertion order.
struct AdamState {
  double lr = 1e-3;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::vector<Tensor> m, v;
};

inline void adam_step(AdamState& s, ParamGraph& g) {
  auto& entries = g.entries();
  if (s.m.size() != entries.size()) {
    s.m.clear();
    s.v.clear();
    for (auto& [_, p] : entries) {
      s.m.emplace_back(p.shape());
      s.v.emplace_back(p.shape());
    }
  }
  ++s.step;
  const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  for (std::size_t k = 0; k < entries.size(); ++k) {
    Var& p = entries[k].second;
    Tensor& w = p.mutable_value();
    Tensor& gr = p.grad();
    Tensor& m = s.m[k];
    Tensor& v = s.v[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = gr[i];
      m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * gi;
      v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * gi * gi;
      if (s.weight_decay != 0.0) w[i] -= s.lr * s.weight_decay * w[i];
      w[i] -= s.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + s.eps);
    }
    gr.fill(0.0);
  }
}

}  // namespace crisk::grad
