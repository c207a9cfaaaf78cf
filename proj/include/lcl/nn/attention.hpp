#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <string>

#include "lcl/nn/layers.hpp"

namespace lcl::nn {

/// Causal mask for a (batch, len, len) score grid: key j is masked for query i
/// when j > i or when key j is padding (`pad` is (batch, len), nonzero = pad).
inline Mask causal_mask(std::size_t batch, std::size_t len, const Mask* pad = nullptr) {
  Mask m({batch, len, len});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < len; ++i)
      for (std::size_t j = 0; j < len; ++j) m.at(b, i, j) = (j > i || (pad && pad->at(b, j))) ? 1 : 0;
  return m;
}

/// Scaled dot-product attention split over `heads`.
///
/// q is (B, Lq, d) and k, v are (B, Lk, d); rank-2 inputs are treated as a
/// batch of one. `mask`, if given, is (B, Lq, Lk) or (Lq, Lk) with nonzero
/// entries marking keys a query may not attend to. Every query row must keep
/// at least one key.
template <typename T>
Tensor<T> scaled_dot_product_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                       const Mask* mask, std::size_t heads) {
  if (q.shape().size() == 2) {
    auto lift = [](const Tensor<T>& x) { return reshape(x, {1, x.shape()[0], x.shape()[1]}); };
    const Tensor<T> out = scaled_dot_product_attention(lift(q), lift(k), lift(v), mask, heads);
    return reshape(out, q.shape());
  }
  const auto& sq = q.shape();
  const auto& sk = k.shape();
  if (sq.size() != 3 || sk.size() != 3 || v.shape() != sk || sq[0] != sk[0] || sq[2] != sk[2]) {
    throw ShapeError("attention: incompatible q " + shape_str(sq) + ", k " + shape_str(sk) + ", v " +
                     shape_str(v.shape()));
  }
  const std::size_t batch = sq[0], lq = sq[1], lk = sk[1], d = sq[2];
  if (heads == 0 || d % heads != 0) {
    throw ShapeError("attention: hidden dim " + std::to_string(d) + " not divisible by " + std::to_string(heads) +
                     " heads");
  }
  const std::size_t dh = d / heads;

  std::optional<Mask> expanded;
  if (mask != nullptr) {
    const bool per_batch = mask->rank() == 3;
    if ((per_batch && mask->shape() != Shape{batch, lq, lk}) || (!per_batch && mask->shape() != Shape{lq, lk})) {
      throw ShapeError("attention: mask " + shape_str(mask->shape()) + " does not match scores (" +
                       std::to_string(batch) + ", " + std::to_string(lq) + ", " + std::to_string(lk) + ")");
    }
    for (std::size_t b = 0; b < (per_batch ? batch : 1); ++b) {
      for (std::size_t i = 0; i < lq; ++i) {
        bool any = false;
        for (std::size_t j = 0; j < lk && !any; ++j) any = (*mask)[(b * lq + i) * lk + j] == 0;
        if (!any) throw std::invalid_argument("attention: query row " + std::to_string(i) + " has no attendable key");
      }
    }
    expanded.emplace(Shape{batch * heads, lq, lk});
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t h = 0; h < heads; ++h)
        std::copy(mask->ptr() + (per_batch ? b * lq * lk : 0), mask->ptr() + (per_batch ? (b + 1) * lq * lk : lq * lk),
                  expanded->ptr() + (b * heads + h) * lq * lk);
  }

  Tensor<T> qh, kt, vh;
  if (heads == 1) {
    qh = q;
    kt = transpose(k, 1, 2);
    vh = v;
  } else {
    qh = reshape(permute(reshape(q, {batch, lq, heads, dh}), {0, 2, 1, 3}), {batch * heads, lq, dh});
    kt = reshape(permute(reshape(k, {batch, lk, heads, dh}), {0, 2, 3, 1}), {batch * heads, dh, lk});
    vh = reshape(permute(reshape(v, {batch, lk, heads, dh}), {0, 2, 1, 3}), {batch * heads, lk, dh});
  }
  Tensor<T> scores = scale(matmul(qh, kt), static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh))));
  if (expanded) scores = masked_fill(scores, *expanded, -std::numeric_limits<T>::infinity());
  Tensor<T> out = matmul(softmax(scores, -1), vh);
  if (heads == 1) return out;
  return reshape(permute(reshape(out, {batch, heads, lq, dh}), {0, 2, 1, 3}), {batch, lq, d});
}

template <typename T>
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(ParameterSet<T>& ps, const std::string& name, std::size_t dim, std::size_t heads)
      : heads_(heads),
        q_(ps, name + ".q", dim, dim),
        k_(ps, name + ".k", dim, dim),
        v_(ps, name + ".v", dim, dim),
        o_(ps, name + ".o", dim, dim) {
    if (heads == 0 || dim % heads != 0) {
      throw std::invalid_argument(name + ": hidden dim " + std::to_string(dim) + " not divisible by " +
                                  std::to_string(heads) + " heads");
    }
  }

  Tensor<T> operator()(const Tensor<T>& x_query, const Tensor<T>& x_kv, const Mask* mask) const {
    return o_(scaled_dot_product_attention(q_(x_query), k_(x_kv), v_(x_kv), mask, heads_));
  }

  std::size_t heads() const { return heads_; }
  const Linear<T>& q_proj() const { return q_; }
  const Linear<T>& k_proj() const { return k_; }
  const Linear<T>& v_proj() const { return v_; }
  const Linear<T>& o_proj() const { return o_; }

 private:
  std::size_t heads_ = 1;
  Linear<T> q_, k_, v_, o_;
};

/// Single learnable-query attention reducing a token set (B, n, d) to one
/// vector per item (B, d). No positional bias, so the result depends on the
/// tokens only as a set.
template <typename T>
class AttentionPool {
 public:
  AttentionPool() = default;
  AttentionPool(ParameterSet<T>& ps, const std::string& name, std::size_t dim, std::size_t heads)
      : query_(ps.normal(name + ".query", {1, dim}, kInitStd, false)), attn_(ps, name + ".attn", dim, heads) {}

  Tensor<T> operator()(const Tensor<T>& tokens) const {
    if (tokens.shape().size() == 2) {
      return reshape((*this)(reshape(tokens, {1, tokens.shape()[0], tokens.shape()[1]})), {tokens.shape()[1]});
    }
    if (tokens.shape().size() != 3 || tokens.shape()[1] == 0) {
      throw std::invalid_argument("attention_pool: expected a non-empty (batch, tokens, dim) input, got " +
                                  shape_str(tokens.shape()));
    }
    const std::size_t batch = tokens.shape()[0];
    const Tensor<T> q = expand_leading(query_, batch);  // (B, 1, d)
    const Tensor<T> pooled = attn_(q, tokens, nullptr);
    return reshape(pooled, {batch, tokens.shape()[2]});
  }

  const Tensor<T>& query() const { return query_; }
  const MultiHeadAttention<T>& attention() const { return attn_; }

 private:
  Tensor<T> query_;
  MultiHeadAttention<T> attn_;
};

}  // namespace lcl::nn
