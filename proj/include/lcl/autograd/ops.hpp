#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "lcl/autograd/tensor.hpp"

namespace lcl {

namespace detail {

template <typename T>
using BackwardFn = std::function<void(Node<T>&)>;

inline void require(bool ok, const std::string& op, const std::string& what) {
  if (!ok) throw ShapeError(op + ": " + what);
}

template <typename T>
void check_finite(const char* op, const NDArray<T>& value) {
  if (!value.all_finite()) throw NumericError(std::string(op) + ": non-finite output for shape " + shape_str(value.shape()));
}

template <typename T>
Tensor<T> record(const char* op, NDArray<T> value, std::initializer_list<Tensor<T>> inputs, BackwardFn<T> bw) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->op = op;
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in.requires_grad();
  if (needs) {
    node->requires_grad = true;
    for (const auto& in : inputs) node->parents.push_back(in.node_ptr());
    node->backward_fn = std::move(bw);
  }
  return Tensor<T>(std::move(node));
}

template <typename T>
Tensor<T> record_many(const char* op, NDArray<T> value, const std::vector<Tensor<T>>& inputs, BackwardFn<T> bw) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->op = op;
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in.requires_grad();
  if (needs) {
    node->requires_grad = true;
    for (const auto& in : inputs) node->parents.push_back(in.node_ptr());
    node->backward_fn = std::move(bw);
  }
  return Tensor<T>(std::move(node));
}

// C[m,n] += A[m,k] * B[k,n], row-major. The inner loop runs over n so each
// output row accumulates in k order independently of the other rows.
template <typename T>
void gemm_nn_acc(const T* __restrict a, const T* __restrict b, T* __restrict c, std::size_t m, std::size_t k,
                 std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* __restrict crow = c + i * n;
    const T* __restrict arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T aik = arow[p];
      const T* __restrict brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
    }
  }
}

// C[k,n] += A[m,k]^T * G[m,n]
template <typename T>
void gemm_tn_acc(const T* __restrict a, const T* __restrict g, T* __restrict c, std::size_t m, std::size_t k,
                 std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* __restrict arow = a + i * k;
    const T* __restrict grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = arow[p];
      T* __restrict crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * grow[j];
    }
  }
}

template <typename T>
std::vector<T> transpose_matrix(const T* src, std::size_t rows, std::size_t cols) {
  std::vector<T> out(rows * cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[j * rows + i] = src[i * cols + j];
  return out;
}

struct Broadcast {
  Shape out;
  std::size_t a_period;
  std::size_t b_period;
};

inline Shape strip_leading_ones(const Shape& s) {
  std::size_t i = 0;
  while (i < s.size() && s[i] == 1) ++i;
  return Shape(s.begin() + static_cast<std::ptrdiff_t>(i), s.end());
}

inline bool is_suffix(const Shape& small, const Shape& big) {
  const Shape s = strip_leading_ones(small);
  if (s.size() > big.size()) return false;
  return std::equal(s.begin(), s.end(), big.end() - static_cast<std::ptrdiff_t>(s.size()));
}

// Broadcasting is restricted to the case where one operand's shape is a
// trailing slice of the other's; the smaller operand then repeats with a
// period equal to its element count.
inline Broadcast plan_broadcast(const char* op, const Shape& a, const Shape& b) {
  if (a == b) return {a, shape_numel(a), shape_numel(b)};
  const std::size_t na = shape_numel(a);
  const std::size_t nb = shape_numel(b);
  if (na >= nb && is_suffix(b, a)) return {a.size() >= b.size() ? a : b, na, nb};
  if (nb >= na && is_suffix(a, b)) return {b.size() >= a.size() ? b : a, na, nb};
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

template <typename T>
NDArray<T> reduce_to_period(const NDArray<T>& g, std::size_t period, const Shape& shape) {
  NDArray<T> out(shape);
  T* o = out.ptr();
  const T* gp = g.ptr();
  for (std::size_t i = 0, n = g.numel(); i < n; ++i) o[i % period] += gp[i];
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------- matmul

/// (..., m, k) x (k, n) or (..., m, k) x (..., k, n) with equal batch dims.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  const std::string where = "matmul " + shape_str(sa) + " x " + shape_str(sb);
  detail::require(sa.size() >= 2 && sb.size() >= 2, "matmul", where + ": operands must have rank >= 2");
  const std::size_t m = sa[sa.size() - 2];
  const std::size_t k = sa.back();
  detail::require(sb[sb.size() - 2] == k, "matmul", where + ": inner dimensions differ");
  const std::size_t n = sb.back();
  const bool shared_b = sb.size() == 2;
  if (!shared_b) {
    detail::require(sb.size() == sa.size() && std::equal(sa.begin(), sa.end() - 2, sb.begin()), "matmul",
                    where + ": batch dimensions differ");
  }
  const std::size_t batch = shape_numel(Shape(sa.begin(), sa.end() - 2));
  Shape so(sa.begin(), sa.end() - 2);
  so.push_back(m);
  so.push_back(n);
  NDArray<T> out(so);
  for (std::size_t bi = 0; bi < batch; ++bi) {
    detail::gemm_nn_acc(a.value().ptr() + bi * m * k, b.value().ptr() + (shared_b ? 0 : bi * k * n),
                        out.ptr() + bi * m * n, m, k, n);
  }
  detail::check_finite("matmul", out);
  return detail::record<T>("matmul", std::move(out), {a, b}, [=](Node<T>& self) {
    Node<T>& na = *self.parents[0];
    Node<T>& nb = *self.parents[1];
    const T* g = self.grad.ptr();
    if (na.requires_grad) {
      na.accumulate_with([&](NDArray<T>& ga) {
        for (std::size_t bi = 0; bi < batch; ++bi) {
          const T* bm = nb.value.ptr() + (shared_b ? 0 : bi * k * n);
          const std::vector<T> bt = detail::transpose_matrix(bm, k, n);
          detail::gemm_nn_acc(g + bi * m * n, bt.data(), ga.ptr() + bi * m * k, m, n, k);
        }
      });
    }
    if (nb.requires_grad) {
      nb.accumulate_with([&](NDArray<T>& gb) {
        for (std::size_t bi = 0; bi < batch; ++bi) {
          detail::gemm_tn_acc(na.value.ptr() + bi * m * k, g + bi * m * n, gb.ptr() + (shared_b ? 0 : bi * k * n), m,
                              k, n);
        }
      });
    }
  });
}

// ------------------------------------------------------- elementwise binary

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  const auto plan = detail::plan_broadcast("add", a.shape(), b.shape());
  NDArray<T> out(plan.out);
  const T* pa = a.value().ptr();
  const T* pb = b.value().ptr();
  T* po = out.ptr();
  const std::size_t n = out.numel();
  if (plan.a_period == n && plan.b_period == n) {
    for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  } else {
    for (std::size_t i = 0; i < n; ++i) po[i] = pa[i % plan.a_period] + pb[i % plan.b_period];
  }
  detail::check_finite("add", out);
  return detail::record<T>("add", std::move(out), {a, b}, [plan](Node<T>& self) {
    for (int side = 0; side < 2; ++side) {
      Node<T>& p = *self.parents[side];
      if (!p.requires_grad) continue;
      const std::size_t period = side == 0 ? plan.a_period : plan.b_period;
      if (period == self.grad.numel()) {
        p.accumulate(self.grad.reshaped(p.value.shape()));
      } else {
        p.accumulate(detail::reduce_to_period(self.grad, period, p.value.shape()));
      }
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  const auto plan = detail::plan_broadcast("mul", a.shape(), b.shape());
  NDArray<T> out(plan.out);
  const T* pa = a.value().ptr();
  const T* pb = b.value().ptr();
  T* po = out.ptr();
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) po[i] = pa[i % plan.a_period] * pb[i % plan.b_period];
  detail::check_finite("mul", out);
  return detail::record<T>("mul", std::move(out), {a, b}, [plan](Node<T>& self) {
    Node<T>& na = *self.parents[0];
    Node<T>& nb = *self.parents[1];
    const T* g = self.grad.ptr();
    const std::size_t n = self.grad.numel();
    if (na.requires_grad) {
      na.accumulate_with([&](NDArray<T>& ga) {
        const T* pb = nb.value.ptr();
        T* o = ga.ptr();
        for (std::size_t i = 0; i < n; ++i) o[i % plan.a_period] += g[i] * pb[i % plan.b_period];
      });
    }
    if (nb.requires_grad) {
      nb.accumulate_with([&](NDArray<T>& gb) {
        const T* pa = na.value.ptr();
        T* o = gb.ptr();
        for (std::size_t i = 0; i < n; ++i) o[i % plan.b_period] += g[i] * pa[i % plan.a_period];
      });
    }
  });
}

/// c * a for a constant c.
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  NDArray<T> out(a.shape());
  const T* pa = a.value().ptr();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = c * pa[i];
  detail::check_finite("scale", out);
  return detail::record<T>("scale", std::move(out), {a}, [c](Node<T>& self) {
    self.parents[0]->accumulate_with([&](NDArray<T>& ga) {
      for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += c * self.grad[i];
    });
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return add(a, scale(b, T(-1)));
}

/// a + c for a constant c.
template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
  NDArray<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] + c;
  detail::check_finite("add_scalar", out);
  return detail::record<T>("add_scalar", std::move(out), {a},
                           [](Node<T>& self) { self.parents[0]->accumulate(self.grad); });
}

// -------------------------------------------------------- elementwise unary

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  NDArray<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::exp(a.value()[i]);
  detail::check_finite("exp", out);
  return detail::record<T>("exp", std::move(out), {a}, [](Node<T>& self) {
    self.parents[0]->accumulate_with([&](NDArray<T>& ga) {
      for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += self.grad[i] * self.value[i];
    });
  });
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  NDArray<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::log(a.value()[i]);
  detail::check_finite("log", out);
  return detail::record<T>("log", std::move(out), {a}, [](Node<T>& self) {
    const NDArray<T>& x = self.parents[0]->value;
    self.parents[0]->accumulate_with([&](NDArray<T>& ga) {
      for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += self.grad[i] / x[i];
    });
  });
}

/// Exact (erf-based) GELU.
template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  constexpr T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  NDArray<T> out(a.shape());
  const T* x = a.value().ptr();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = T(0.5) * x[i] * (T(1) + std::erf(x[i] * inv_sqrt2));
  detail::check_finite("gelu", out);
  return detail::record<T>("gelu", std::move(out), {a}, [](Node<T>& self) {
    constexpr T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
    const T inv_sqrt2pi = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
    const NDArray<T>& x = self.parents[0]->value;
    self.parents[0]->accumulate_with([&](NDArray<T>& ga) {
      for (std::size_t i = 0; i < ga.numel(); ++i) {
        const T xi = x[i];
        const T cdf = T(0.5) * (T(1) + std::erf(xi * inv_sqrt2));
        const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * xi * xi);
        ga[i] += self.grad[i] * (cdf + xi * pdf);
      }
    });
  });
}

// ------------------------------------------------------------- reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& a, int axis, bool keepdim = false) {
  const std::size_t ax = normalize_axis(axis, a.shape().size(), "sum");
  const auto s = split_at_axis(a.shape(), ax);
  Shape so = a.shape();
  if (keepdim) {
    so[ax] = 1;
  } else {
    so.erase(so.begin() + static_cast<std::ptrdiff_t>(ax));
  }
  NDArray<T> out(so);
  const T* x = a.value().ptr();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t e = 0; e < s.extent; ++e)
      for (std::size_t i = 0; i < s.inner; ++i) out[o * s.inner + i] += x[(o * s.extent + e) * s.inner + i];
  detail::check_finite("sum", out);
  return detail::record<T>("sum", std::move(out), {a}, [s](Node<T>& self) {
    self.parents[0]->accumulate_with([&](NDArray<T>& ga) {
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t e = 0; e < s.extent; ++e)
          for (std::size_t i = 0; i < s.inner; ++i) ga[(o * s.extent + e) * s.inner + i] += self.grad[o * s.inner + i];
    });
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a, int axis, bool keepdim = false) {
  const std::size_t ax = normalize_axis(axis, a.shape().size(), "mean");
  return scale(sum(a, axis, keepdim), T(1) / static_cast<T>(a.shape()[ax]));
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
  T acc = 0;
  for (T x : a.value().data()) acc += x;
  NDArray<T> out = NDArray<T>::scalar(acc);
  detail::check_finite("sum_all", out);
  return detail::record<T>("sum_all", std::move(out), {a}, [](Node<T>& self) {
    const T g = self.grad[0];
    self.parents[0]->accumulate_with([&](NDArray<T>& ga) {
      for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += g;
    });
  });
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a) {
  if (a.numel() == 0) throw ShapeError("mean_all: empty tensor");
  return scale(sum_all(a), T(1) / static_cast<T>(a.numel()));
}

// ---------------------------------------------------------------- softmax

namespace detail {
// Masked (-inf) entries are allowed in softmax inputs; a row with no finite
// entry has no attendable element and is rejected.
template <typename T>
T row_max(const T* x, std::size_t extent, std::size_t inner, const char* op) {
  T mx = -std::numeric_limits<T>::infinity();
  for (std::size_t e = 0; e < extent; ++e) mx = std::max(mx, x[e * inner]);
  if (!std::isfinite(mx)) throw NumericError(std::string(op) + ": row has no finite entry (fully masked)");
  return mx;
}
}  // namespace detail

template <typename T>
Tensor<T> softmax(const Tensor<T>& a, int axis = -1) {
  const std::size_t ax = normalize_axis(axis, a.shape().size(), "softmax");
  const auto s = split_at_axis(a.shape(), ax);
  NDArray<T> out(a.shape());
  const T* x = a.value().ptr();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      const T mx = detail::row_max(x + base, s.extent, s.inner, "softmax");
      T z = 0;
      for (std::size_t e = 0; e < s.extent; ++e) {
        const T v = std::exp(x[base + e * s.inner] - mx);
        out[base + e * s.inner] = v;
        z += v;
      }
      for (std::size_t e = 0; e < s.extent; ++e) out[base + e * s.inner] /= z;
    }
  }
  detail::check_finite("softmax", out);
  return detail::record<T>("softmax", std::move(out), {a}, [s](Node<T>& self) {
    self.parents[0]->accumulate_with([&](NDArray<T>& ga) {
      const T* y = self.value.ptr();
      const T* g = self.grad.ptr();
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t i = 0; i < s.inner; ++i) {
          const std::size_t base = o * s.extent * s.inner + i;
          T dot = 0;
          for (std::size_t e = 0; e < s.extent; ++e) dot += y[base + e * s.inner] * g[base + e * s.inner];
          for (std::size_t e = 0; e < s.extent; ++e) {
            const std::size_t idx = base + e * s.inner;
            ga[idx] += y[idx] * (g[idx] - dot);
          }
        }
      }
    });
  });
}

/// Log-softmax. Entries whose input is -inf (masked) stay -inf; all others
/// must be finite.
template <typename T>
Tensor<T> log_softmax(const Tensor<T>& a, int axis = -1) {
  const std::size_t ax = normalize_axis(axis, a.shape().size(), "log_softmax");
  const auto s = split_at_axis(a.shape(), ax);
  NDArray<T> out(a.shape());
  const T* x = a.value().ptr();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      const T mx = detail::row_max(x + base, s.extent, s.inner, "log_softmax");
      T z = 0;
      for (std::size_t e = 0; e < s.extent; ++e) z += std::exp(x[base + e * s.inner] - mx);
      const T lz = mx + std::log(z);
      for (std::size_t e = 0; e < s.extent; ++e) out[base + e * s.inner] = x[base + e * s.inner] - lz;
    }
  }
  for (std::size_t i = 0; i < out.numel(); ++i) {
    if (!std::isfinite(out[i]) && x[i] != -std::numeric_limits<T>::infinity()) {
      throw NumericError("log_softmax: non-finite output for shape " + shape_str(out.shape()));
    }
  }
  return detail::record<T>("log_softmax", std::move(out), {a}, [s](Node<T>& self) {
    self.parents[0]->accumulate_with([&](NDArray<T>& ga) {
      const T* lp = self.value.ptr();
      const T* g = self.grad.ptr();
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t i = 0; i < s.inner; ++i) {
          const std::size_t base = o * s.extent * s.inner + i;
          T gsum = 0;
          for (std::size_t e = 0; e < s.extent; ++e) gsum += g[base + e * s.inner];
          for (std::size_t e = 0; e < s.extent; ++e) {
            const std::size_t idx = base + e * s.inner;
            ga[idx] += g[idx] - std::exp(lp[idx]) * gsum;
          }
        }
      }
    });
  });
}

// -------------------------------------------------------------- layer norm

/// Normalizes the last axis to zero mean and unit variance (no affine part).
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& a, T eps = T(1e-5)) {
  detail::require(a.shape().size() >= 1, "layer_norm", "rank-0 input");
  const std::size_t d = a.shape().back();
  const std::size_t rows = a.numel() / d;
  NDArray<T> out(a.shape());
  std::vector<T> inv_std(rows);
  const T* x = a.value().ptr();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x + r * d;
    T mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<T>(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<T>(d);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = (xr[j] - mu) * is;
  }
  detail::check_finite("layer_norm", out);
  return detail::record<T>("layer_norm", std::move(out), {a}, [d, rows, inv_std = std::move(inv_std)](Node<T>& self) {
    self.parents[0]->accumulate_with([&](NDArray<T>& ga) {
      const T* y = self.value.ptr();
      const T* g = self.grad.ptr();
      for (std::size_t r = 0; r < rows; ++r) {
        T gm = 0, gy = 0;
        for (std::size_t j = 0; j < d; ++j) {
          gm += g[r * d + j];
          gy += g[r * d + j] * y[r * d + j];
        }
        gm /= static_cast<T>(d);
        gy /= static_cast<T>(d);
        for (std::size_t j = 0; j < d; ++j) {
          const std::size_t idx = r * d + j;
          ga[idx] += inv_std[r] * (g[idx] - gm - y[idx] * gy);
        }
      }
    });
  });
}

// ------------------------------------------------------------ data movement

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  NDArray<T> out = a.value().reshaped(std::move(shape));
  return detail::record<T>("reshape", std::move(out), {a}, [](Node<T>& self) {
    Node<T>& p = *self.parents[0];
    p.accumulate(self.grad.reshaped(p.value.shape()));
  });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& a, const std::vector<std::size_t>& perm) {
  const Shape& sa = a.shape();
  const std::size_t r = sa.size();
  detail::require(perm.size() == r, "permute", "permutation length does not match rank of " + shape_str(sa));
  {
    std::vector<bool> used(r, false);
    for (auto p : perm) {
      detail::require(p < r && !used[p], "permute", "invalid permutation for " + shape_str(sa));
      used[p] = true;
    }
  }
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * sa[i];
  Shape so(r);
  std::vector<std::size_t> src_stride(r);
  for (std::size_t i = 0; i < r; ++i) {
    so[i] = sa[perm[i]];
    src_stride[i] = in_stride[perm[i]];
  }
  // Output linear index -> input offset table; reused by the backward pass.
  const std::size_t n = a.numel();
  std::vector<std::size_t> src(n);
  {
    std::vector<std::size_t> idx(r, 0);
    std::size_t off = 0;
    for (std::size_t o = 0; o < n; ++o) {
      src[o] = off;
      for (std::size_t d = r; d-- > 0;) {
        ++idx[d];
        off += src_stride[d];
        if (idx[d] < so[d]) break;
        off -= src_stride[d] * so[d];
        idx[d] = 0;
      }
    }
  }
  NDArray<T> out(so);
  const T* x = a.value().ptr();
  for (std::size_t o = 0; o < n; ++o) out[o] = x[src[o]];
  return detail::record<T>("permute", std::move(out), {a}, [src = std::move(src)](Node<T>& self) {
    self.parents[0]->accumulate_with([&](NDArray<T>& ga) {
      for (std::size_t o = 0; o < src.size(); ++o) ga[src[o]] += self.grad[o];
    });
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a, int ax1 = -2, int ax2 = -1) {
  const std::size_t r = a.shape().size();
  std::vector<std::size_t> perm(r);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::swap(perm[normalize_axis(ax1, r, "transpose")], perm[normalize_axis(ax2, r, "transpose")]);
  return permute(a, perm);
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis = 0) {
  detail::require(!parts.empty(), "concat", "no inputs");
  const Shape& s0 = parts[0].shape();
  const std::size_t ax = normalize_axis(axis, s0.size(), "concat");
  std::vector<std::size_t> extents;
  Shape so = s0;
  so[ax] = 0;
  for (const auto& p : parts) {
    Shape a = p.shape();
    Shape b = s0;
    detail::require(a.size() == b.size(), "concat", "rank mismatch " + shape_str(a) + " vs " + shape_str(b));
    a[ax] = b[ax] = 0;
    detail::require(a == b, "concat", "shape mismatch " + shape_str(p.shape()) + " vs " + shape_str(s0));
    extents.push_back(p.shape()[ax]);
    so[ax] += p.shape()[ax];
  }
  const auto split = split_at_axis(so, ax);
  NDArray<T> out(so);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const T* x = parts[k].value().ptr();
    const std::size_t e = extents[k];
    for (std::size_t o = 0; o < split.outer; ++o)
      std::copy(x + o * e * split.inner, x + (o + 1) * e * split.inner,
                out.ptr() + (o * split.extent + offset) * split.inner);
    offset += e;
  }
  return detail::record_many<T>("concat", std::move(out), parts, [split, extents](Node<T>& self) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < extents.size(); ++k) {
      const std::size_t e = extents[k];
      self.parents[k]->accumulate_with([&](NDArray<T>& ga) {
        for (std::size_t o = 0; o < split.outer; ++o)
          for (std::size_t q = 0; q < e * split.inner; ++q)
            ga[o * e * split.inner + q] += self.grad[(o * split.extent + offset) * split.inner + q];
      });
      offset += e;
    }
  });
}

/// Half-open range [begin, end) along `axis`.
template <typename T>
Tensor<T> slice(const Tensor<T>& a, int axis, std::size_t begin, std::size_t end) {
  const std::size_t ax = normalize_axis(axis, a.shape().size(), "slice");
  detail::require(begin <= end && end <= a.shape()[ax], "slice",
                  "range [" + std::to_string(begin) + ", " + std::to_string(end) + ") invalid for " + shape_str(a.shape()));
  const auto s = split_at_axis(a.shape(), ax);
  Shape so = a.shape();
  so[ax] = end - begin;
  const std::size_t e = end - begin;
  NDArray<T> out(so);
  const T* x = a.value().ptr();
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy(x + (o * s.extent + begin) * s.inner, x + (o * s.extent + end) * s.inner, out.ptr() + o * e * s.inner);
  return detail::record<T>("slice", std::move(out), {a}, [s, begin, e](Node<T>& self) {
    self.parents[0]->accumulate_with([&](NDArray<T>& ga) {
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t q = 0; q < e * s.inner; ++q) ga[(o * s.extent + begin) * s.inner + q] += self.grad[o * e * s.inner + q];
    });
  });
}

/// Selects rows (entries along axis 0); repeated indices accumulate in backward.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& a, const std::vector<std::size_t>& indices) {
  detail::require(a.shape().size() >= 1, "gather_rows", "rank-0 input");
  const std::size_t rows = a.shape()[0];
  const std::size_t width = a.numel() / std::max<std::size_t>(rows, 1);
  for (auto i : indices) {
    if (i >= rows) throw std::out_of_range("gather_rows: index " + std::to_string(i) + " >= " + std::to_string(rows));
  }
  Shape so = a.shape();
  so[0] = indices.size();
  NDArray<T> out(so);
  const T* x = a.value().ptr();
  for (std::size_t r = 0; r < indices.size(); ++r) std::copy(x + indices[r] * width, x + (indices[r] + 1) * width, out.ptr() + r * width);
  return detail::record<T>("gather_rows", std::move(out), {a}, [indices, width](Node<T>& self) {
    self.parents[0]->accumulate_with([&](NDArray<T>& ga) {
      for (std::size_t r = 0; r < indices.size(); ++r) {
        T* dst = ga.ptr() + indices[r] * width;
        const T* g = self.grad.ptr() + r * width;
        for (std::size_t j = 0; j < width; ++j) dst[j] += g[j];
      }
    });
  });
}

/// Embedding-table lookup: (vocab, d) table, ids -> (ids.size(), d).
template <typename T>
Tensor<T> embedding(const Tensor<T>& table, const std::vector<std::size_t>& ids) {
  detail::require(table.shape().size() == 2, "embedding", "table must be (vocab, dim), got " + shape_str(table.shape()));
  return gather_rows(table, ids);
}

/// For a (..., C) input, picks element idx[r] from each length-C row.
template <typename T>
Tensor<T> take_along_last(const Tensor<T>& a, const std::vector<std::size_t>& idx) {
  detail::require(a.shape().size() >= 1, "take_along_last", "rank-0 input");
  const std::size_t c = a.shape().back();
  const std::size_t rows = a.numel() / c;
  detail::require(idx.size() == rows, "take_along_last",
                  std::to_string(idx.size()) + " indices for " + std::to_string(rows) + " rows");
  Shape so(a.shape().begin(), a.shape().end() - 1);
  NDArray<T> out(so);
  for (std::size_t r = 0; r < rows; ++r) {
    if (idx[r] >= c) throw std::out_of_range("take_along_last: index out of range");
    out[r] = a.value()[r * c + idx[r]];
  }
  detail::check_finite("take_along_last", out);
  return detail::record<T>("take_along_last", std::move(out), {a}, [idx, c](Node<T>& self) {
    self.parents[0]->accumulate_with([&](NDArray<T>& ga) {
      for (std::size_t r = 0; r < idx.size(); ++r) ga[r * c + idx[r]] += self.grad[r];
    });
  });
}

/// Replaces entries where `mask` is nonzero with `value` (may be -inf).
/// The mask has the input's shape or a trailing slice of it.
template <typename T>
Tensor<T> masked_fill(const Tensor<T>& a, const Mask& mask, T value) {
  const auto plan = detail::plan_broadcast("masked_fill", a.shape(), mask.shape());
  detail::require(plan.out == a.shape(), "masked_fill",
                  "mask " + shape_str(mask.shape()) + " does not broadcast to " + shape_str(a.shape()));
  const std::size_t period = mask.numel();
  NDArray<T> out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) {
    if (mask[i % period]) {
      out[i] = value;
    } else if (!std::isfinite(out[i])) {
      throw NumericError("masked_fill: non-finite unmasked input");
    }
  }
  return detail::record<T>("masked_fill", std::move(out), {a}, [mask, period](Node<T>& self) {
    self.parents[0]->accumulate_with([&](NDArray<T>& ga) {
      for (std::size_t i = 0; i < ga.numel(); ++i)
        if (!mask[i % period]) ga[i] += self.grad[i];
    });
  });
}

/// Repeats `a` along a new leading axis of extent n.
template <typename T>
Tensor<T> expand_leading(const Tensor<T>& a, std::size_t n) {
  Shape so = a.shape();
  so.insert(so.begin(), n);
  NDArray<T> out(so);
  const std::size_t w = a.numel();
  for (std::size_t i = 0; i < n; ++i) std::copy(a.value().ptr(), a.value().ptr() + w, out.ptr() + i * w);
  return detail::record<T>("expand_leading", std::move(out), {a}, [w](Node<T>& self) {
    self.parents[0]->accumulate(detail::reduce_to_period(self.grad, w, self.parents[0]->value.shape()));
  });
}

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) {
  return add(a, b);
}
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) {
  return sub(a, b);
}
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) {
  return mul(a, b);
}

}  // namespace lcl
