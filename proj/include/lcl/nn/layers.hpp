#pragma once

#include <cmath>
#include <string>

#include "lcl/autograd/ops.hpp"
#include "lcl/nn/parameters.hpp"

namespace lcl::nn {

inline constexpr double kInitStd = 0.02;

/// Per-call settings for stochastic layers.
struct ForwardContext {
  bool training = false;
  Rng* rng = nullptr;
};

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(ParameterSet<T>& ps, const std::string& name, std::size_t in, std::size_t out, bool bias = true)
      : in_(in), out_(out) {
    weight_ = ps.normal(name + ".weight", {in, out}, 1.0 / std::sqrt(static_cast<double>(in)));
    if (bias) bias_ = ps.filled(name + ".bias", {out}, T(0));
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    Tensor<T> y = matmul(x, weight_);
    return bias_.defined() ? add(y, bias_) : y;
  }

  const Tensor<T>& weight() const { return weight_; }
  const Tensor<T>& bias() const { return bias_; }
  std::size_t in_features() const { return in_; }
  std::size_t out_features() const { return out_; }

 private:
  std::size_t in_ = 0, out_ = 0;
  Tensor<T> weight_;
  Tensor<T> bias_;
};

/// Layer normalization over the last axis with learned gain and bias.
template <typename T>
class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParameterSet<T>& ps, const std::string& name, std::size_t dim, T eps = T(1e-5)) : eps_(eps) {
    gain_ = ps.filled(name + ".gain", {dim}, T(1));
    bias_ = ps.filled(name + ".bias", {dim}, T(0));
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return add(mul(layer_norm(x, eps_), gain_), bias_); }

 private:
  T eps_ = T(1e-5);
  Tensor<T> gain_;
  Tensor<T> bias_;
};

template <typename T>
class Mlp {
 public:
  Mlp() = default;
  Mlp(ParameterSet<T>& ps, const std::string& name, std::size_t dim, std::size_t hidden)
      : fc1_(ps, name + ".fc1", dim, hidden), fc2_(ps, name + ".fc2", hidden, dim) {}

  Tensor<T> operator()(const Tensor<T>& x) const { return fc2_(gelu(fc1_(x))); }

 private:
  Linear<T> fc1_;
  Linear<T> fc2_;
};

/// Stochastic depth on a residual branch of shape (batch, ...): each sample's
/// branch is dropped with probability `rate` and survivors are rescaled by
/// 1/(1-rate). Identity outside training.
template <typename T>
Tensor<T> drop_path(const Tensor<T>& branch, double rate, const ForwardContext& ctx) {
  if (!ctx.training || rate <= 0.0) return branch;
  if (ctx.rng == nullptr) throw std::logic_error("drop_path: training mode requires an rng");
  const std::size_t batch = branch.shape().empty() ? 1 : branch.shape()[0];
  const std::size_t per = branch.numel() / std::max<std::size_t>(batch, 1);
  NDArray<T> factor(branch.shape());
  for (std::size_t b = 0; b < batch; ++b) {
    const bool keep = rate < 1.0 && !ctx.rng->bernoulli(rate);
    const T f = keep ? static_cast<T>(1.0 / (1.0 - rate)) : T(0);
    std::fill(factor.ptr() + b * per, factor.ptr() + (b + 1) * per, f);
  }
  return mul(branch, Tensor<T>::constant(std::move(factor)));
}

}  // namespace lcl::nn
