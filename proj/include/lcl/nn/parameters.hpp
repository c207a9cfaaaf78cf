#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lcl/autograd/tensor.hpp"
#include "lcl/core/random.hpp"

namespace lcl::nn {

template <typename T>
struct NamedParameter {
  std::string name;
  Tensor<T> tensor;
  bool decay = true;  // receives weight decay
};

/// Ordered registry of trainable tensors. Each parameter's initial values
/// come from a stream seeded by (seed, name), so a parameter's init does not
/// depend on which other parameters exist or on creation order.
template <typename T>
class ParameterSet {
 public:
  explicit ParameterSet(std::uint64_t seed = 0) : seed_(seed) {}

  Tensor<T> normal(const std::string& name, Shape shape, double stddev, bool decay = true) {
    Rng rng(derive_seed(seed_, name));
    NDArray<T> a(std::move(shape));
    for (auto& x : a.data()) x = static_cast<T>(rng.normal() * stddev);
    return add(name, std::move(a), decay);
  }

  Tensor<T> filled(const std::string& name, Shape shape, T value, bool decay = false) {
    return add(name, NDArray<T>(std::move(shape), value), decay);
  }

  Tensor<T> add(const std::string& name, NDArray<T> value, bool decay) {
    for (const auto& p : params_) {
      if (p.name == name) throw std::invalid_argument("ParameterSet: duplicate parameter '" + name + "'");
    }
    Tensor<T> t = Tensor<T>::parameter(std::move(value));
    params_.push_back({name, t, decay});
    return t;
  }

  const std::vector<NamedParameter<T>>& all() const noexcept { return params_; }
  std::vector<NamedParameter<T>>& all() noexcept { return params_; }

  const Tensor<T>& get(const std::string& name) const {
    for (const auto& p : params_)
      if (p.name == name) return p.tensor;
    throw std::out_of_range("ParameterSet: no parameter '" + name + "'");
  }

  bool contains(const std::string& name) const {
    for (const auto& p : params_)
      if (p.name == name) return true;
    return false;
  }

  std::size_t element_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.numel();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  std::uint64_t seed() const noexcept { return seed_; }

 private:
  std::uint64_t seed_;
  std::vector<NamedParameter<T>> params_;
};

}  // namespace lcl::nn
