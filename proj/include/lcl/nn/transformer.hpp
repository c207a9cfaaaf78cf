#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "lcl/nn/attention.hpp"

namespace lcl::nn {

struct BlockConfig {
  std::size_t hidden_dim = 64;
  std::size_t num_heads = 4;
  std::size_t mlp_ratio = 4;
  double drop_path_rate = 0.0;
  double layer_scale_init = 1e-5;

  void validate() const {
    if (num_heads == 0 || hidden_dim % num_heads != 0) {
      throw std::invalid_argument("BlockConfig: hidden_dim " + std::to_string(hidden_dim) +
                                  " must be divisible by num_heads " + std::to_string(num_heads));
    }
    if (!(drop_path_rate >= 0.0 && drop_path_rate <= 1.0)) {
      throw std::invalid_argument("BlockConfig: drop_path_rate must lie in [0, 1]");
    }
    if (!(layer_scale_init >= 0.0)) throw std::invalid_argument("BlockConfig: layer_scale_init must be >= 0");
  }
};

/// Ceiling on the stochastic-depth rate reached by the deepest block.
inline constexpr double kMaxDropPath = 0.2;

/// Linear stochastic-depth schedule: 0 at the first block, `max_rate` at the last.
inline std::vector<double> drop_path_schedule(std::size_t depth, double max_rate) {
  std::vector<double> rates(depth, 0.0);
  for (std::size_t i = 0; i < depth && depth > 1; ++i) rates[i] = max_rate * static_cast<double>(i) / static_cast<double>(depth - 1);
  return rates;
}

/// Pre-norm block with layer scale on both residual branches:
///   x' = x  + drop_path(gamma1 * attn(norm1(x)))
///   y  = x' + drop_path(gamma2 * mlp(norm2(x')))
template <typename T>
class TransformerBlock {
 public:
  TransformerBlock() = default;
  TransformerBlock(ParameterSet<T>& ps, const std::string& name, const BlockConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    norm1_ = LayerNorm<T>(ps, name + ".norm1", cfg.hidden_dim);
    attn_ = MultiHeadAttention<T>(ps, name + ".attn", cfg.hidden_dim, cfg.num_heads);
    gamma1_ = ps.filled(name + ".gamma1", {cfg.hidden_dim}, static_cast<T>(cfg.layer_scale_init));
    norm2_ = LayerNorm<T>(ps, name + ".norm2", cfg.hidden_dim);
    mlp_ = Mlp<T>(ps, name + ".mlp", cfg.hidden_dim, cfg.hidden_dim * cfg.mlp_ratio);
    gamma2_ = ps.filled(name + ".gamma2", {cfg.hidden_dim}, static_cast<T>(cfg.layer_scale_init));
  }

  /// x is (B, L, d) or (L, d).
  Tensor<T> operator()(const Tensor<T>& x, const Mask* mask, const ForwardContext& ctx) const {
    const Tensor<T> h = norm1_(x);
    const Tensor<T> x1 = add(x, drop_path(mul(attn_(h, h, mask), gamma1_), cfg_.drop_path_rate, ctx));
    return add(x1, drop_path(mul(mlp_(norm2_(x1)), gamma2_), cfg_.drop_path_rate, ctx));
  }

  const BlockConfig& config() const { return cfg_; }

 private:
  BlockConfig cfg_;
  LayerNorm<T> norm1_;
  MultiHeadAttention<T> attn_;
  Tensor<T> gamma1_;
  LayerNorm<T> norm2_;
  Mlp<T> mlp_;
  Tensor<T> gamma2_;
};

/// Builds `depth` blocks named `<prefix>.<i>` with the linear drop-path schedule.
template <typename T>
std::vector<TransformerBlock<T>> make_blocks(ParameterSet<T>& ps, const std::string& prefix, std::size_t depth,
                                             BlockConfig cfg, double drop_path_max) {
  std::vector<TransformerBlock<T>> blocks;
  const auto rates = drop_path_schedule(depth, drop_path_max);
  for (std::size_t i = 0; i < depth; ++i) {
    cfg.drop_path_rate = rates[i];
    blocks.emplace_back(ps, prefix + "." + std::to_string(i), cfg);
  }
  return blocks;
}

}  // namespace lcl::nn
