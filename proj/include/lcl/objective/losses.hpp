#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "lcl/data/batch.hpp"
#include "lcl/nn/layers.hpp"

namespace lcl {

inline constexpr double kInitTemperature = 0.07;
inline constexpr double kMinTemperature = 0.01;

/// W1 projects image representations, W2 projects context representations,
/// tau = exp(log_tau) scales their similarity.
template <typename T>
class ContrastiveHead {
 public:
  ContrastiveHead() = default;
  ContrastiveHead(nn::ParameterSet<T>& ps, const std::string& name, std::size_t image_dim, std::size_t context_dim,
                  std::size_t embed_dim, bool normalize = false)
      : normalize_(normalize),
        w1_(ps, name + ".w1", image_dim, embed_dim, false),
        w2_(ps, name + ".w2", context_dim, embed_dim, false),
        log_tau_(ps.filled(name + ".log_tau", {1}, static_cast<T>(std::log(kInitTemperature)))) {}

  Tensor<T> project_image(const Tensor<T>& v) const { return maybe_normalize(w1_(v)); }
  Tensor<T> project_context(const Tensor<T>& t) const { return maybe_normalize(w2_(t)); }

  const Tensor<T>& log_tau() const { return log_tau_; }
  double tau() const { return std::exp(static_cast<double>(log_tau_.value()[0])); }

  /// Keeps tau >= 0.01; call after every optimizer update.
  void clamp_temperature() {
    auto& lt = log_tau_.mutable_value()[0];
    const T lo = static_cast<T>(std::log(kMinTemperature));
    if (lt < lo) lt = lo;
  }

  bool normalized() const { return normalize_; }
  const nn::Linear<T>& w1() const { return w1_; }
  const nn::Linear<T>& w2() const { return w2_; }

 private:
  Tensor<T> maybe_normalize(const Tensor<T>& x) const {
    if (!normalize_) return x;
    return l2_normalize_rows(x);
  }

  static Tensor<T> l2_normalize_rows(const Tensor<T>& x) {
    // x / sqrt(sum x^2 + eps) along the last axis, built from primitive ops.
    const Tensor<T> sq = sum(mul(x, x), -1, true);
    const Tensor<T> inv = exp(scale(log(add_scalar(sq, static_cast<T>(1e-12))), static_cast<T>(-0.5)));
    return mul(x, expand_last(inv, x.shape().back()));
  }

  static Tensor<T> expand_last(const Tensor<T>& col, std::size_t n) {
    // (B, 1) -> (B, n) by multiplying with a row of ones.
    return matmul(col, Tensor<T>::constant(NDArray<T>({1, n}, T(1))));
  }

  bool normalize_ = false;
  nn::Linear<T> w1_, w2_;
  Tensor<T> log_tau_;
};

template <typename T>
struct ContrastiveResult {
  Tensor<T> loss;           // context->image term + image->context term
  Tensor<T> context_to_image;  // mean CE of row softmax at the diagonal
  Tensor<T> image_to_context;  // mean CE of column softmax at the diagonal
  NDArray<T> similarity;    // S = (W2 t)(W1 v)^T / tau, rows indexed by context
};

/// Bidirectional InfoNCE over a similarity grid already divided by tau.
/// `exclude` (B, B), if given, hides off-diagonal negatives.
template <typename T>
ContrastiveResult<T> contrastive_from_similarity(const Tensor<T>& s, const Mask* exclude = nullptr) {
  if (s.shape().size() != 2 || s.shape()[0] != s.shape()[1]) {
    throw ShapeError("contrastive_loss: similarity must be square, got " + shape_str(s.shape()));
  }
  const std::size_t b = s.shape()[0];
  if (b < 2) throw std::invalid_argument("contrastive_loss: needs at least 2 images, got " + std::to_string(b));
  Tensor<T> grid = s;
  if (exclude != nullptr) {
    Mask m = *exclude;
    for (std::size_t i = 0; i < b; ++i) m.at(i, i) = 0;
    grid = masked_fill(s, m, -std::numeric_limits<T>::infinity());
  }
  std::vector<std::size_t> diag(b);
  for (std::size_t i = 0; i < b; ++i) diag[i] = i;
  ContrastiveResult<T> r;
  r.context_to_image = scale(mean_all(take_along_last(log_softmax(grid, -1), diag)), T(-1));
  r.image_to_context = scale(mean_all(take_along_last(log_softmax(transpose(grid, 0, 1), -1), diag)), T(-1));
  r.loss = add(r.context_to_image, r.image_to_context);
  r.similarity = s.value();
  return r;
}

/// v: (B, d_v) pooled image representations, t: (B, d_t) context embeddings.
template <typename T>
ContrastiveResult<T> contrastive_loss(const Tensor<T>& v, const Tensor<T>& t, const ContrastiveHead<T>& head,
                                      const Mask* exclude = nullptr) {
  if (v.shape().size() != 2 || t.shape().size() != 2 || v.shape()[0] != t.shape()[0]) {
    throw ShapeError("contrastive_loss: v " + shape_str(v.shape()) + " and t " + shape_str(t.shape()) +
                     " must be (B, d) with equal B");
  }
  if (v.shape()[0] < 2) throw std::invalid_argument("contrastive_loss: needs at least 2 images");
  const Tensor<T> a = head.project_image(v);
  const Tensor<T> c = head.project_context(t);
  const Tensor<T> inv_tau = exp(scale(head.log_tau(), T(-1)));
  const Tensor<T> s = mul(matmul(c, transpose(a, 0, 1)), inv_tau);
  return contrastive_from_similarity(s, exclude);
}

/// Off-diagonal pairs of images from the same document.
inline Mask same_document_mask(const BatchedSequence& b) {
  const std::size_t n = b.num_images();
  Mask m({n, n}, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      m.at(i, j) = (i != j && b.images[i].ref.doc_id == b.images[j].ref.doc_id && b.images[i].row == b.images[j].row) ? 1 : 0;
  return m;
}

/// Flat logit rows that predict each generation target, and the target ids.
struct GenerationTargets {
  std::vector<std::size_t> predictor_rows;
  std::vector<std::size_t> tokens;
};

inline GenerationTargets generation_targets(const BatchedSequence& b) {
  GenerationTargets g;
  for (std::size_t r = 0; r < b.rows; ++r)
    for (std::size_t c = 1; c < b.width; ++c) {
      const std::size_t k = b.index(r, c);
      if (!b.targets[k]) continue;
      g.predictor_rows.push_back(k - 1);
      g.tokens.push_back(static_cast<std::size_t>(b.tokens[k]));
    }
  return g;
}

/// Mean next-token negative log-likelihood over the batch's generation
/// targets; logits at position p predict the token at p + 1.
template <typename T>
Tensor<T> generation_loss(const Tensor<T>& text_logits, const BatchedSequence& b) {
  const auto& s = text_logits.shape();
  if (s.size() != 3 || s[0] != b.rows || s[1] != b.width) {
    throw ShapeError("generation_loss: logits " + shape_str(s) + " do not match batch (" + std::to_string(b.rows) +
                     ", " + std::to_string(b.width) + ")");
  }
  const auto g = generation_targets(b);
  if (g.tokens.empty()) throw std::invalid_argument("generation_loss: batch has no generation targets");
  const Tensor<T> rows = gather_rows(reshape(text_logits, {b.rows * b.width, s[2]}), g.predictor_rows);
  return scale(mean_all(take_along_last(log_softmax(rows, -1), g.tokens)), T(-1));
}

/// L = lambda * L_con + L_gen. An undefined L_con (no images) contributes 0.
template <typename T>
Tensor<T> total_loss(const Tensor<T>& l_con, const Tensor<T>& l_gen, double lambda) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("total_loss: lambda must be non-negative");
  if (!l_con.defined() || lambda == 0.0) return l_gen;
  return add(scale(l_con, static_cast<T>(lambda)), l_gen);
}

struct CollapseMetrics {
  double variance = std::numeric_limits<double>::quiet_NaN();
  double alignment = std::numeric_limits<double>::quiet_NaN();
  double uniformity = std::numeric_limits<double>::quiet_NaN();
};

/// Below this normalized-embedding variance the representation counts as collapsed.
inline constexpr double kCollapseThreshold = 0.01;

namespace detail {

template <typename T>
std::vector<std::vector<double>> normalized_rows(const NDArray<T>& x) {
  const std::size_t n = x.shape()[0], d = x.numel() / std::max<std::size_t>(n, 1);
  std::vector<std::vector<double>> out(n, std::vector<double>(d));
  for (std::size_t i = 0; i < n; ++i) {
    double norm = 0;
    for (std::size_t k = 0; k < d; ++k) norm += static_cast<double>(x[i * d + k]) * static_cast<double>(x[i * d + k]);
    norm = std::sqrt(norm);
    for (std::size_t k = 0; k < d; ++k) out[i][k] = norm > 0 ? static_cast<double>(x[i * d + k]) / norm : 0.0;
  }
  return out;
}

}  // namespace detail

/// variance: total variance of the L2-normalized rows of v (sum over
/// dimensions of the per-dimension population variance, in [0, 1]).
/// alignment: mean distance between matched normalized (a_i, c_i).
/// uniformity: log mean exp(-2 |v_i - v_j|^2) over pairs i < j of normalized v.
/// Returns NaN fields when fewer than two rows are given.
template <typename T>
CollapseMetrics collapse_metrics(const NDArray<T>& v, const NDArray<T>* a = nullptr, const NDArray<T>* c = nullptr) {
  CollapseMetrics m;
  if (v.rank() != 2 || v.shape()[0] < 2) return m;
  const auto u = detail::normalized_rows(v);
  const std::size_t n = u.size(), d = u[0].size();
  double total = 0;
  for (std::size_t k = 0; k < d; ++k) {
    double mu = 0;
    for (std::size_t i = 0; i < n; ++i) mu += u[i][k];
    mu /= static_cast<double>(n);
    double var = 0;
    for (std::size_t i = 0; i < n; ++i) var += (u[i][k] - mu) * (u[i][k] - mu);
    total += var / static_cast<double>(n);
  }
  m.variance = total;
  double kernel = 0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double dist2 = 0;
      for (std::size_t k = 0; k < d; ++k) dist2 += (u[i][k] - u[j][k]) * (u[i][k] - u[j][k]);
      kernel += std::exp(-2.0 * dist2);
      ++pairs;
    }
  m.uniformity = std::log(kernel / static_cast<double>(pairs));
  if (a != nullptr && c != nullptr && a->shape() == c->shape() && a->shape()[0] == n) {
    const auto ua = detail::normalized_rows(*a), uc = detail::normalized_rows(*c);
    double dist = 0;
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0;
      for (std::size_t k = 0; k < ua[i].size(); ++k) s += (ua[i][k] - uc[i][k]) * (ua[i][k] - uc[i][k]);
      dist += std::sqrt(s);
    }
    m.alignment = dist / static_cast<double>(n);
  }
  return m;
}

}  // namespace lcl
