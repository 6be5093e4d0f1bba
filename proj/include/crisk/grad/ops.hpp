#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <vector>

#include "crisk/grad/var.hpp"

namespace crisk::grad {

using Rng = std::mt19937_64;

// ---------------------------------------------------------------------------
// Kernels
// ---------------------------------------------------------------------------
namespace kernel {

// c[m,n] += a[m,k] * b[k,n]
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// c[m,k] += g[m,n] * b[k,n]^T
inline void gemm_nt(const double* g, const double* b, double* c, std::size_t m, std::size_t n,
                    std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* gi = g + i * n;
    double* ci = c + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* bp = b + p * n;
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += gi[j] * bp[j];
      ci[p] += s;
    }
  }
}

// c[k,n] += a[m,k]^T * g[m,n]
inline void gemm_tn(const double* a, const double* g, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* gi = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += av * gi[j];
    }
  }
}

inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

inline double log_normal_pdf(double z) {
  return -0.5 * z * z - 0.5 * std::log(2.0 * std::numbers::pi);
}

/// log(1 - Phi(z)), accurate far into the upper tail.
inline double log_normal_sf(double z) {
  if (z < 30.0) return std::log(0.5 * std::erfc(z / std::numbers::sqrt2));
  const double z2 = z * z;
  return log_normal_pdf(z) - std::log(z) + std::log1p(-1.0 / z2 + 3.0 / (z2 * z2));
}

}  // namespace kernel

// ---------------------------------------------------------------------------
// Broadcasting
// ---------------------------------------------------------------------------
namespace detail {

struct Broadcast {
  Shape out;
  std::vector<std::size_t> stride_a, stride_b;
  bool same = false;
};

inline std::vector<std::size_t> aligned_strides(const Shape& s, const Shape& out) {
  std::vector<std::size_t> st(out.size(), 0);
  std::size_t acc = 1;
  const std::size_t off = out.size() - s.size();
  for (std::size_t i = s.size(); i-- > 0;) {
    st[i + off] = (s[i] == 1) ? 0 : acc;
    acc *= s[i];
  }
  return st;
}

inline Broadcast broadcast(const Shape& a, const Shape& b, const char* op) {
  Broadcast bc;
  if (a == b) {
    bc.out = a;
    bc.same = true;
    return bc;
  }
  const std::size_t r = std::max(a.size(), b.size());
  bc.out.assign(r, 1);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
                       shape_str(b));
    }
    bc.out[i] = std::max(da, db);
  }
  bc.stride_a = aligned_strides(a, bc.out);
  bc.stride_b = aligned_strides(b, bc.out);
  return bc;
}

template <class F>
void for_each_broadcast(const Broadcast& bc, F&& f) {
  const std::size_t n = shape_size(bc.out);
  if (bc.same) {
    for (std::size_t i = 0; i < n; ++i) f(i, i, i);
    return;
  }
  const std::size_t r = bc.out.size();
  std::vector<std::size_t> idx(r, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t i = 0; i < n; ++i) {
    f(i, ia, ib);
    for (std::size_t d = r; d-- > 0;) {
      if (++idx[d] < bc.out[d]) {
        ia += bc.stride_a[d];
        ib += bc.stride_b[d];
        break;
      }
      ia -= bc.stride_a[d] * (bc.out[d] - 1);
      ib -= bc.stride_b[d] * (bc.out[d] - 1);
      idx[d] = 0;
    }
  }
}

// Shared driver for broadcasting binary ops. `fwd(a,b)` gives the value,
// `da(a,b,y)` / `db(a,b,y)` the local partials.
template <class Fwd, class Da, class Db>
Var binary(const Var& a, const Var& b, const char* name, Fwd fwd, Da da, Db db) {
  auto bc = broadcast(a.shape(), b.shape(), name);
  Tensor out(bc.out);
  const auto& av = a.value();
  const auto& bv = b.value();
  for_each_broadcast(bc, [&](std::size_t i, std::size_t ia, std::size_t ib) {
    out[i] = fwd(av[ia], bv[ib]);
  });
  return record(std::move(out), {a, b}, [bc, da, db](Node& n) {
    Node& pa = *n.parents[0];
    Node& pb = *n.parents[1];
    const bool ga = pa.requires_grad, gb = pb.requires_grad;
    if (ga) pa.ensure_grad();
    if (gb) pb.ensure_grad();
    for_each_broadcast(bc, [&](std::size_t i, std::size_t ia, std::size_t ib) {
      const double g = n.grad[i];
      if (g == 0.0) return;
      const double x = pa.value[ia], y = pb.value[ib], z = n.value[i];
      if (ga) pa.grad[ia] += g * da(x, y, z);
      if (gb) pb.grad[ib] += g * db(x, y, z);
    });
  });
}

// `deriv(x, y)` is dy/dx given input x and output y.
template <class Fwd, class Deriv>
Var unary(const Var& a, Fwd fwd, Deriv deriv) {
  Tensor out(a.shape());
  const auto& av = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i]);
  return record(std::move(out), {a}, [deriv](Node& n) {
    Node& p = *n.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < n.value.size(); ++i) {
      p.grad[i] += n.grad[i] * deriv(p.value[i], n.value[i]);
    }
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic (numpy-style broadcasting)
// ---------------------------------------------------------------------------

inline Var add(const Var& a, const Var& b) {
  return detail::binary(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

inline Var sub(const Var& a, const Var& b) {
  return detail::binary(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}

inline Var mul(const Var& a, const Var& b) {
  return detail::binary(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

inline Var div(const Var& a, const Var& b) {
  return detail::binary(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; },
      [](double x, double y, double) { return -x / (y * y); });
}

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }

inline Var scale(const Var& a, double c) {
  return detail::unary(a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

inline Var add_scalar(const Var& a, double c) {
  return detail::unary(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

inline Var operator*(const Var& a, double c) { return scale(a, c); }
inline Var operator*(double c, const Var& a) { return scale(a, c); }
inline Var operator+(const Var& a, double c) { return add_scalar(a, c); }
inline Var operator-(const Var& a, double c) { return add_scalar(a, -c); }
inline Var operator-(const Var& a) { return scale(a, -1.0); }
inline Var operator-(double c, const Var& a) { return add_scalar(scale(a, -1.0), c); }

// ---------------------------------------------------------------------------
// Elementwise functions
// ---------------------------------------------------------------------------

inline Var exp(const Var& a) {
  return detail::unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Var log(const Var& a) {
  return detail::unary(a, [](double x) { return std::log(x); },
                       [](double x, double) { return 1.0 / x; });
}

inline Var tanh(const Var& a) {
  return detail::unary(a, [](double x) { return std::tanh(x); },
                       [](double, double y) { return 1.0 - y * y; });
}

inline Var sigmoid(const Var& a) {
  return detail::unary(a, kernel::sigmoid, [](double, double y) { return y * (1.0 - y); });
}

inline Var softplus(const Var& a) {
  return detail::unary(a, kernel::softplus, [](double x, double) { return kernel::sigmoid(x); });
}

inline Var relu(const Var& a) {
  return detail::unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
                       [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

/// GELU, tanh approximation.
inline Var gelu(const Var& a) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  return detail::unary(
      a,
      [](double x) { return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x))); },
      [](double x, double) {
        const double u = c * (x + 0.044715 * x * x * x);
        const double t = std::tanh(u);
        return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * 0.044715 * x * x);
      });
}

inline Var square(const Var& a) {
  return detail::unary(a, [](double x) { return x * x; },
                       [](double x, double) { return 2.0 * x; });
}

/// Standard normal CDF.
inline Var normal_cdf(const Var& a) {
  return detail::unary(a, kernel::normal_cdf,
                       [](double x, double) { return std::exp(kernel::log_normal_pdf(x)); });
}

/// log(1 - Phi(z)).
inline Var log_normal_sf(const Var& a) {
  return detail::unary(a, kernel::log_normal_sf, [](double x, double y) {
    return -std::exp(kernel::log_normal_pdf(x) - y);
  });
}

/// max(x, lo); the gradient is blocked where the clamp is active.
inline Var clamp_min(const Var& a, double lo) {
  return detail::unary(a, [lo](double x) { return x > lo ? x : lo; },
                       [lo](double x, double) { return x > lo ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// Linear algebra and reductions
// ---------------------------------------------------------------------------

inline Var matmul(const Var& a, const Var& b) {
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.rows()) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(A.shape()) + " and " +
                     shape_str(B.shape()));
  }
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  Tensor out({m, n});
  kernel::gemm_nn(A.data().data(), B.data().data(), out.data().data(), m, k, n);
  return record(std::move(out), {a, b}, [m, k, n](Node& nd) {
    Node& pa = *nd.parents[0];
    Node& pb = *nd.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      kernel::gemm_nt(nd.grad.data().data(), pb.value.data().data(), pa.grad.data().data(), m, n,
                      k);
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      kernel::gemm_tn(pa.value.data().data(), nd.grad.data().data(), pb.grad.data().data(), m, k,
                      n);
    }
  });
}

inline Var transpose(const Var& a) {
  const auto& A = a.value();
  const std::size_t m = A.rows(), n = A.cols();
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(j, i) = A(i, j);
  return record(std::move(out), {a}, [m, n](Node& nd) {
    Node& p = *nd.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) p.grad(i, j) += nd.grad(j, i);
  });
}

inline Var reshape(const Var& a, Shape s) {
  Tensor out = a.value().reshaped(std::move(s));
  return record(std::move(out), {a}, [](Node& nd) {
    Node& p = *nd.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < nd.grad.size(); ++i) p.grad[i] += nd.grad[i];
  });
}

inline Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return record(Tensor::scalar(s), {a}, [](Node& nd) {
    Node& p = *nd.parents[0];
    p.ensure_grad();
    const double g = nd.grad[0];
    for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += g;
  });
}

inline Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

/// Sum of a matrix over one axis, keeping the reduced dimension as 1.
inline Var sum_axis(const Var& a, int axis) {
  const auto& A = a.value();
  const std::size_t m = A.rows(), n = A.cols();
  if (axis != 0 && axis != 1) throw ShapeError("sum_axis: axis must be 0 or 1");
  Tensor out(axis == 0 ? Shape{1, n} : Shape{m, 1});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[axis == 0 ? j : i] += A(i, j);
  return record(std::move(out), {a}, [m, n, axis](Node& nd) {
    Node& p = *nd.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) p.grad(i, j) += nd.grad[axis == 0 ? j : i];
  });
}

inline Var softmax_rows(const Var& a) {
  const auto& A = a.value();
  const std::size_t m = A.rows(), n = A.cols();
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, A(i, j));
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += (out(i, j) = std::exp(A(i, j) - mx));
    for (std::size_t j = 0; j < n; ++j) out(i, j) /= s;
  }
  return record(std::move(out), {a}, [m, n](Node& nd) {
    Node& p = *nd.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += nd.grad(i, j) * nd.value(i, j);
      for (std::size_t j = 0; j < n; ++j) p.grad(i, j) += nd.value(i, j) * (nd.grad(i, j) - dot);
    }
  });
}

inline Var log_softmax_rows(const Var& a) {
  const auto& A = a.value();
  const std::size_t m = A.rows(), n = A.cols();
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, A(i, j));
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += std::exp(A(i, j) - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < n; ++j) out(i, j) = A(i, j) - lse;
  }
  return record(std::move(out), {a}, [m, n](Node& nd) {
    Node& p = *nd.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < m; ++i) {
      double gs = 0.0;
      for (std::size_t j = 0; j < n; ++j) gs += nd.grad(i, j);
      for (std::size_t j = 0; j < n; ++j)
        p.grad(i, j) += nd.grad(i, j) - std::exp(nd.value(i, j)) * gs;
    }
  });
}

/// Row-wise log-sum-exp, shape [m,1].
inline Var logsumexp_rows(const Var& a) {
  const auto& A = a.value();
  const std::size_t m = A.rows(), n = A.cols();
  Tensor out({m, 1});
  for (std::size_t i = 0; i < m; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, A(i, j));
    if (!std::isfinite(mx)) {
      out[i] = mx;
      continue;
    }
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += std::exp(A(i, j) - mx);
    out[i] = mx + std::log(s);
  }
  return record(std::move(out), {a}, [m, n](Node& nd) {
    Node& p = *nd.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < m; ++i) {
      const double g = nd.grad[i];
      if (g == 0.0 || !std::isfinite(nd.value[i])) continue;
      for (std::size_t j = 0; j < n; ++j)
        p.grad(i, j) += g * std::exp(p.value(i, j) - nd.value[i]);
    }
  });
}

/// Row-wise normalization to zero mean and unit variance (no affine part).
inline Var layer_norm_rows(const Var& a, double eps = 1e-5) {
  const auto& A = a.value();
  const std::size_t m = A.rows(), n = A.cols();
  Tensor out({m, n});
  std::vector<double> inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += A(i, j);
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (A(i, j) - mu) * (A(i, j) - mu);
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) out(i, j) = (A(i, j) - mu) * inv_std[i];
  }
  return record(std::move(out), {a}, [m, n, inv_std = std::move(inv_std)](Node& nd) {
    Node& p = *nd.parents[0];
    p.ensure_grad();
    const double dn = static_cast<double>(n);
    for (std::size_t i = 0; i < m; ++i) {
      double gm = 0.0, gx = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        gm += nd.grad(i, j);
        gx += nd.grad(i, j) * nd.value(i, j);
      }
      gm /= dn;
      gx /= dn;
      for (std::size_t j = 0; j < n; ++j)
        p.grad(i, j) += inv_std[i] * (nd.grad(i, j) - gm - nd.value(i, j) * gx);
    }
  });
}

/// Inverted dropout. Identity when not training or p == 0.
inline Var dropout(const Var& a, double p, Rng& rng, bool training) {
  if (p < 0.0 || p >= 1.0) throw ConfigError("dropout probability must lie in [0,1)");
  if (!training || p == 0.0) return a;
  std::bernoulli_distribution keep(1.0 - p);
  Tensor mask(a.shape());
  const double s = 1.0 / (1.0 - p);
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = keep(rng) ? s : 0.0;
  return mul(a, constant(std::move(mask)));
}

// ---------------------------------------------------------------------------
// Structural ops
// ---------------------------------------------------------------------------

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t m = parts[0].value().rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (auto& p : parts) {
    if (p.value().rows() != m) {
      throw ShapeError("concat_cols: row mismatch " + shape_str(parts[0].shape()) + " vs " +
                       shape_str(p.shape()));
    }
    widths.push_back(p.value().cols());
    total += widths.back();
  }
  Tensor out({m, total});
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = parts[k].value();
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(v.data().data() + i * v.cols(), widths[k], &out(i, off));
    off += widths[k];
  }
  return record(std::move(out), parts, [m, total, widths](Node& nd) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < nd.parents.size(); ++k) {
      Node& p = *nd.parents[k];
      if (p.requires_grad) {
        p.ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < widths[k]; ++j) p.grad(i, j) += nd.grad[i * total + off + j];
      }
      off += widths[k];
    }
  });
}

inline Var slice_cols(const Var& a, std::size_t begin, std::size_t end) {
  const auto& A = a.value();
  if (begin >= end || end > A.cols()) {
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") invalid for shape " + shape_str(A.shape()));
  }
  const std::size_t m = A.rows(), w = end - begin;
  Tensor out({m, w});
  for (std::size_t i = 0; i < m; ++i) std::copy_n(A.data().data() + i * A.cols() + begin, w, &out(i, 0));
  return record(std::move(out), {a}, [m, w, begin](Node& nd) {
    Node& p = *nd.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) p.grad(i, begin + j) += nd.grad(i, j);
  });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t n = parts[0].value().cols();
  std::size_t total = 0;
  for (auto& p : parts) {
    if (p.value().cols() != n) {
      throw ShapeError("concat_rows: column mismatch " + shape_str(parts[0].shape()) + " vs " +
                       shape_str(p.shape()));
    }
    total += p.value().rows();
  }
  std::vector<double> data;
  data.reserve(total * n);
  for (auto& p : parts) data.insert(data.end(), p.value().data().begin(), p.value().data().end());
  return record(Tensor({total, n}, std::move(data)), parts, [](Node& nd) {
    std::size_t off = 0;
    for (auto& pp : nd.parents) {
      Node& p = *pp;
      if (p.requires_grad) {
        p.ensure_grad();
        for (std::size_t i = 0; i < p.value.size(); ++i) p.grad[i] += nd.grad[off + i];
      }
      off += p.value.size();
    }
  });
}

/// Row gather; repeated indices accumulate in backward.
inline Var gather_rows(const Var& a, std::vector<std::size_t> idx) {
  const auto& A = a.value();
  const std::size_t n = A.cols();
  if (idx.empty()) throw ShapeError("gather_rows: empty index list");
  Tensor out({idx.size(), n});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= A.rows()) throw ShapeError("gather_rows: index out of range");
    std::copy_n(A.data().data() + idx[i] * n, n, &out(i, 0));
  }
  return record(std::move(out), {a}, [n, idx = std::move(idx)](Node& nd) {
    Node& p = *nd.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < n; ++j) p.grad(idx[i], j) += nd.grad(i, j);
  });
}

/// Picks one column per row: out[i] = a[i, cols[i]], shape [m,1].
inline Var pick_cols(const Var& a, std::vector<std::size_t> cols) {
  const auto& A = a.value();
  if (cols.size() != A.rows()) throw ShapeError("pick_cols: one column index per row required");
  Tensor out({A.rows(), 1});
  for (std::size_t i = 0; i < cols.size(); ++i) {
    if (cols[i] >= A.cols()) throw ShapeError("pick_cols: column index out of range");
    out[i] = A(i, cols[i]);
  }
  return record(std::move(out), {a}, [cols = std::move(cols)](Node& nd) {
    Node& p = *nd.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < cols.size(); ++i) p.grad(i, cols[i]) += nd.grad[i];
  });
}

}  // namespace crisk::grad
