#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "lcl/nn/parameters.hpp"

namespace lcl {

struct Schedule {
  double peak_lr = 3e-4;
  double min_lr = 0.0;
  std::size_t warmup_steps = 100;
  std::size_t total_steps = 2000;
};

/// Linear warmup from 0 to peak, then half-cosine down to min_lr.
inline double lr_at_step(std::size_t step, const Schedule& s) {
  if (step > s.total_steps) {
    throw std::out_of_range("lr_at_step: step " + std::to_string(step) + " outside [0, " + std::to_string(s.total_steps) + "]");
  }
  if (s.warmup_steps >= s.total_steps) throw std::invalid_argument("lr_at_step: warmup_steps must be below total_steps");
  if (step < s.warmup_steps) return s.peak_lr * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
  const double progress =
      static_cast<double>(step - s.warmup_steps) / static_cast<double>(s.total_steps - s.warmup_steps);
  return s.min_lr + 0.5 * (s.peak_lr - s.min_lr) * (1.0 + std::cos(std::numbers::pi * progress));
}

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.1;
};

/// Decoupled-weight-decay Adam. Moments are kept per parameter in the
/// registry's order; parameters flagged without decay skip the decay term.
template <typename T>
class AdamW {
 public:
  AdamW() = default;
  AdamW(const nn::ParameterSet<T>& ps, AdamWConfig cfg) : cfg_(cfg) {
    for (const auto& p : ps.all()) {
      m_.emplace_back(p.tensor.shape());
      v_.emplace_back(p.tensor.shape());
    }
  }

  /// One update at learning rate `lr`. Missing gradients count as zero.
  void step(nn::ParameterSet<T>& ps, double lr) {
    auto& params = ps.all();
    if (params.size() != m_.size()) throw std::logic_error("AdamW: parameter set changed since construction");
    for (const auto& p : params) {
      if (p.tensor.has_grad() && !p.tensor.grad().all_finite()) {
        throw NumericError("adamw_step: non-finite gradient for parameter '" + p.name + "'");
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i];
      NDArray<T>& w = p.tensor.mutable_value();
      NDArray<T>& m = m_[i];
      NDArray<T>& v = v_[i];
      const bool has = p.tensor.has_grad();
      const T* g = has ? p.tensor.grad().ptr() : nullptr;
      const double decay = p.decay ? lr * cfg_.weight_decay : 0.0;
      for (std::size_t k = 0; k < w.numel(); ++k) {
        const double gk = has ? static_cast<double>(g[k]) : 0.0;
        const double mk = cfg_.beta1 * static_cast<double>(m[k]) + (1.0 - cfg_.beta1) * gk;
        const double vk = cfg_.beta2 * static_cast<double>(v[k]) + (1.0 - cfg_.beta2) * gk * gk;
        m[k] = static_cast<T>(mk);
        v[k] = static_cast<T>(vk);
        const double update = (mk / bc1) / (std::sqrt(vk / bc2) + cfg_.eps);
        w[k] = static_cast<T>(static_cast<double>(w[k]) * (1.0 - decay) - lr * update);
      }
    }
  }

  std::size_t steps() const { return t_; }
  void set_steps(std::size_t t) { t_ = t; }
  const AdamWConfig& config() const { return cfg_; }
  std::vector<NDArray<T>>& first_moments() { return m_; }
  std::vector<NDArray<T>>& second_moments() { return v_; }
  const std::vector<NDArray<T>>& first_moments() const { return m_; }
  const std::vector<NDArray<T>>& second_moments() const { return v_; }

 private:
  AdamWConfig cfg_;
  std::size_t t_ = 0;
  std::vector<NDArray<T>> m_, v_;
};

/// Scales every gradient so the global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
template <typename T>
double clip_grad_norm(nn::ParameterSet<T>& ps, double max_norm) {
  double sq = 0;
  for (const auto& p : ps.all()) {
    if (!p.tensor.has_grad()) continue;
    for (T g : p.tensor.grad().data()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const T f = static_cast<T>(max_norm / (norm + 1e-12));
    for (auto& p : ps.all()) {
      if (!p.tensor.has_grad()) continue;
      for (auto& g : p.tensor.node()->grad.data()) g *= f;
    }
  }
  return norm;
}

}  // namespace lcl
