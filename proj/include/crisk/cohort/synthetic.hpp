#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>
#include <json.hpp>

#include "crisk/cohort/cohort.hpp"

namespace crisk::cohort {

/// Latent-time competing-risks simulator with cause-specific Weibull
/// hazards h_r(t|x) = (k_r/l_r) (t/l_r)^(k_r-1) exp(beta_r . x).
struct SynthSpec {
  std::size_t n = 1000;
  std::size_t d = 2;
  std::vector<double> shapes;               // k_r > 0
  std::vector<double> scales;               // l_r > 0
  std::vector<std::vector<double>> betas;   // R x d
  double horizon = 10.0;                    // censoring ~ U[0, horizon]
  std::uint64_t seed = 0;

  int risks() const { return static_cast<int>(shapes.size()); }

  void validate() const {
    if (shapes.empty()) throw ConfigError("synthetic spec needs at least one risk");
    if (scales.size() != shapes.size() || betas.size() != shapes.size()) {
      throw ConfigError("synthetic spec: shapes, scales and betas must have one entry per risk");
    }
    for (std::size_t r = 0; r < shapes.size(); ++r) {
      if (!(shapes[r] > 0.0) || !(scales[r] > 0.0)) {
        throw ConfigError("synthetic spec: shapes and scales must be strictly positive");
      }
      if (betas[r].size() != d) {
        throw ConfigError("synthetic spec: beta for risk " + std::to_string(r + 1) + " has length " +
                          std::to_string(betas[r].size()) + ", expected d=" + std::to_string(d));
      }
    }
    if (!(horizon >= 0.0)) throw ConfigError("synthetic spec: horizon must be non-negative");
  }

  double linear_predictor(int r, std::span<const double> x) const {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += betas[static_cast<std::size_t>(r)][j] * x[j];
    return s;
  }

  /// Cumulative cause-specific hazard H_r(t|x).
  double cum_hazard(int r, std::span<const double> x, double t) const {
    const auto i = static_cast<std::size_t>(r);
    return std::pow(t / scales[i], shapes[i]) * std::exp(linear_predictor(r, x));
  }

  double hazard(int r, std::span<const double> x, double t) const {
    const auto i = static_cast<std::size_t>(r);
    const double k = shapes[i], l = scales[i];
    return (k / l) * std::pow(t / l, k - 1.0) * std::exp(linear_predictor(r, x));
  }
};

inline nlohmann::json to_json(const SynthSpec& s) {
  return {{"n", s.n},         {"d", s.d},           {"shapes", s.shapes}, {"scales", s.scales},
          {"betas", s.betas}, {"horizon", s.horizon}, {"seed", s.seed}};
}

inline SynthSpec synth_spec_from_json(const nlohmann::json& j) {
  static const std::vector<std::string> keys = {"n", "d", "shapes", "scales", "betas", "horizon", "seed"};
  for (auto& [k, _] : j.items()) {
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) {
      throw ConfigError("synthetic spec: unknown key '" + k + "'");
    }
  }
  SynthSpec s;
  try {
    s.n = j.value("n", s.n);
    s.d = j.at("d").get<std::size_t>();
    s.shapes = j.at("shapes").get<std::vector<double>>();
    s.scales = j.at("scales").get<std::vector<double>>();
    s.betas = j.at("betas").get<std::vector<std::vector<double>>>();
    s.horizon = j.value("horizon", s.horizon);
    s.seed = j.value("seed", s.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("synthetic spec: ") + e.what());
  }
  s.validate();
  return s;
}

/// Draws n subjects: x ~ N(0, I), one latent Weibull time per risk, the
/// observed event is the earliest, then uniform censoring on [0, horizon].
inline Cohort generate_synthetic(const SynthSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Cohort c;
  c.risk_names = default_risk_names(spec.risks());
  for (std::size_t j = 0; j < spec.d; ++j) c.feature_names.push_back("x" + std::to_string(j + 1));
  c.subjects.reserve(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    Subject s;
    s.id = "s" + std::to_string(i + 1);
    s.x.resize(spec.d);
    for (auto& v : s.x) v = normal(rng);
    double best = std::numeric_limits<double>::infinity();
    int best_r = 0;
    for (int r = 0; r < spec.risks(); ++r) {
      const auto ri = static_cast<std::size_t>(r);
      const double k = spec.shapes[ri];
      const double scale = spec.scales[ri] * std::exp(-spec.linear_predictor(r, s.x) / k);
      // 1 - U keeps the argument of log strictly positive.
      const double t = scale * std::pow(-std::log(1.0 - unif(rng)), 1.0 / k);
      if (t < best) {
        best = t;
        best_r = r + 1;
      }
    }
    const double cens = spec.horizon * unif(rng);
    if (cens < best) {
      s.time = cens;
      s.event = 0;
    } else {
      s.time = best;
      s.event = best_r;
    }
    c.subjects.push_back(std::move(s));
  }
  return c;
}

/// Ground-truth cumulative incidence F_r(t|x) = int_0^t h_r(u) S(u) du, by
/// double-exponential quadrature (handles the u^(k-1) endpoint singularity
/// when k < 1). `r` is 1-based. Pass t = +inf for the limiting incidence.
inline double oracle_cif(const SynthSpec& spec, std::span<const double> x, double t, int r) {
  if (t < 0.0) throw ConfigError("oracle_cif: negative time");
  if (r < 1 || r > spec.risks()) throw ConfigError("oracle_cif: risk out of range");
  if (t == 0.0) return 0.0;
  const int ri = r - 1;
  auto integrand = [&](double u) {
    if (u <= 0.0) return 0.0;
    double total = 0.0;
    for (int q = 0; q < spec.risks(); ++q) total += spec.cum_hazard(q, x, u);
    const double h = spec.hazard(ri, x, u);
    if (total > 745.0) return 0.0;
    return h * std::exp(-total);
  };
  static thread_local boost::math::quadrature::tanh_sinh<double> finite;
  if (std::isinf(t)) {
    static thread_local boost::math::quadrature::exp_sinh<double> tail;
    const double split = *std::min_element(spec.scales.begin(), spec.scales.end());
    return finite.integrate(integrand, 0.0, split, 1e-10) +
           tail.integrate(integrand, split, std::numeric_limits<double>::infinity(), 1e-10);
  }
  return finite.integrate(integrand, 0.0, t, 1e-10);
}

/// oracle_cif at every entry of a non-decreasing time vector, accumulated
/// interval by interval; much cheaper than independent calls when many times
/// are needed for the same subject.
inline std::vector<double> oracle_cif_path(const SynthSpec& spec, std::span<const double> x,
                                           std::span<const double> sorted_times, int r) {
  if (r < 1 || r > spec.risks()) throw ConfigError("oracle_cif: risk out of range");
  std::vector<double> out(sorted_times.size(), 0.0);
  if (sorted_times.empty()) return out;
  const int ri = r - 1;
  auto integrand = [&](double u) {
    double total = 0.0;
    for (int q = 0; q < spec.risks(); ++q) total += spec.cum_hazard(q, x, u);
    if (total > 745.0) return 0.0;
    return spec.hazard(ri, x, u) * std::exp(-total);
  };
  double prev_t = 0.0, acc = 0.0;
  for (std::size_t k = 0; k < sorted_times.size(); ++k) {
    const double t = sorted_times[k];
    if (t < prev_t) throw ConfigError("oracle_cif_path: times must be sorted");
    if (t > prev_t) {
      acc += prev_t == 0.0 ? oracle_cif(spec, x, t, r)
                           : boost::math::quadrature::gauss_kronrod<double, 15>::integrate(integrand, prev_t, t,
                                                                                           10, 1e-11);
      prev_t = t;
    }
    out[k] = acc;
  }
  return out;
}

}  // namespace crisk::cohort
