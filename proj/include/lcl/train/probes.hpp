#pragma once

#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "lcl/train/model.hpp"
#include "lcl/train/optimizer.hpp"

namespace lcl {

struct RetrievalResult {
  double text_to_image = 0;  // TR@1: each caption retrieves its image
  double image_to_text = 0;  // IR@1: each image retrieves its caption
  std::size_t candidates = 0;

  double mean() const { return 0.5 * (text_to_image + image_to_text); }
};

namespace detail {

inline std::vector<std::vector<double>> unit_rows(const NDArray<double>& x) {
  const std::size_t n = x.shape()[0], d = x.shape()[1];
  std::vector<std::vector<double>> out(n, std::vector<double>(d));
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0;
    for (std::size_t k = 0; k < d; ++k) s += x.at(i, k) * x.at(i, k);
    s = std::sqrt(s);
    for (std::size_t k = 0; k < d; ++k) out[i][k] = s > 0 ? x.at(i, k) / s : 0.0;
  }
  return out;
}

}  // namespace detail

/// Top-1 recall in both directions under cosine similarity; row i of each
/// matrix is a matched pair. Ties go to the lowest index. With `pair_ids`,
/// a retrieved row counts as correct when it carries the query's id, so
/// duplicated pairs are interchangeable.
inline RetrievalResult retrieval_recall(const NDArray<double>& image_emb, const NDArray<double>& text_emb,
                                        const std::vector<std::size_t>* pair_ids = nullptr) {
  if (image_emb.rank() != 2 || image_emb.shape() != text_emb.shape()) {
    throw ShapeError("retrieval_recall: embeddings " + shape_str(image_emb.shape()) + " and " +
                     shape_str(text_emb.shape()) + " must be matching (n, d)");
  }
  const std::size_t n = image_emb.shape()[0];
  if (n < 2) throw std::invalid_argument("retrieval_recall: needs at least 2 pairs");
  if (pair_ids && pair_ids->size() != n) throw ShapeError("retrieval_recall: pair_ids length differs from pair count");
  auto same = [&](std::size_t x, std::size_t y) { return pair_ids ? (*pair_ids)[x] == (*pair_ids)[y] : x == y; };
  const auto a = detail::unit_rows(image_emb), c = detail::unit_rows(text_emb);
  std::vector<std::vector<double>> sim(n, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) sim[i][j] = std::inner_product(c[i].begin(), c[i].end(), a[j].begin(), 0.0);
  std::size_t t2i = 0, i2t = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best_img = 0, best_txt = 0;
    for (std::size_t j = 1; j < n; ++j) {
      if (sim[i][j] > sim[i][best_img]) best_img = j;
      if (sim[j][i] > sim[best_txt][i]) best_txt = j;
    }
    t2i += same(best_img, i);
    i2t += same(best_txt, i);
  }
  return {static_cast<double>(t2i) / static_cast<double>(n), static_cast<double>(i2t) / static_cast<double>(n), n};
}

template <typename T>
NDArray<double> to_double(const Tensor<T>& t) {
  return t.value().template cast<double>();
}

/// Projected image and caption embeddings (W1 v, W2 t) for each pair; each
/// caption is read as "</s> caption" and its context is the output at the
/// <BoI> that follows.
template <typename T>
std::pair<NDArray<double>, NDArray<double>> pair_embeddings(const LCLModel<T>& model, const std::vector<EvalPair>& pairs,
                                                            std::size_t chunk = 32) {
  const auto& cfg = model.config();
  const std::size_t P = cfg.patches_per_image();
  const std::size_t e = cfg.embed_dim;
  NDArray<double> img({pairs.size(), e}), txt({pairs.size(), e});
  CollateOptions co;
  co.max_seq_len = cfg.lm.max_seq_len;
  co.patches_per_image = P;
  co.specials = cfg.lm.specials;
  nn::ForwardContext ctx{};
  for (std::size_t start = 0; start < pairs.size(); start += chunk) {
    const std::size_t end = std::min(pairs.size(), start + chunk);
    std::vector<InterleavedSequence> seqs;
    for (std::size_t i = start; i < end; ++i) {
      InterleavedSequence s;
      s.append_text(cfg.lm.specials.eos);
      s.append_tokens(pairs[i].caption);
      ImageRef ref;
      ref.pixels = pairs[i].image;
      ref.image_id = i;
      ref.caption = pairs[i].caption;
      ref.attrs = pairs[i].attrs;
      s.append_image(ref, P, cfg.lm.specials);
      seqs.push_back(std::move(s));
    }
    const auto b = collate_batch(seqs, co);
    const auto [v, t] = model.representations(b, ctx);
    const auto a = to_double(model.head().project_image(v));
    const auto c = to_double(model.head().project_context(t));
    std::copy(a.ptr(), a.ptr() + a.numel(), img.ptr() + start * e);
    std::copy(c.ptr(), c.ptr() + c.numel(), txt.ptr() + start * e);
  }
  return {img, txt};
}

template <typename T>
RetrievalResult eval_retrieval_probe(const LCLModel<T>& model, const std::vector<EvalPair>& pairs) {
  if (pairs.size() < 2) throw std::invalid_argument("eval_retrieval_probe: eval set needs at least 2 pairs");
  const auto [img, txt] = pair_embeddings(model, pairs);
  return retrieval_recall(img, txt);
}

enum class ProbeLabel { Shape, Color, Quadrant };

inline ProbeLabel parse_probe_label(const std::string& s) {
  if (s == "shape") return ProbeLabel::Shape;
  if (s == "color") return ProbeLabel::Color;
  if (s == "quadrant") return ProbeLabel::Quadrant;
  throw std::invalid_argument("unknown probe label '" + s + "' (expected shape, color or quadrant)");
}

inline int probe_label(const ImageAttributes& a, ProbeLabel l) {
  switch (l) {
    case ProbeLabel::Shape: return a.shape;
    case ProbeLabel::Color: return a.color;
    case ProbeLabel::Quadrant: return a.vertical * 2 + a.horizontal;
  }
  return 0;
}

struct LabeledImages {
  std::vector<ImagePtr> images;
  std::vector<int> labels;
  std::size_t classes = 0;
};

/// Freshly rendered images with labels drawn in equal proportion per class.
inline LabeledImages make_probe_set(const CorpusSpec& spec, ProbeLabel label, std::size_t count, std::uint64_t seed) {
  LabeledImages out;
  out.classes = label == ProbeLabel::Shape ? spec.shapes.size() : label == ProbeLabel::Color ? spec.colors.size() : 4;
  Rng rng(seed);
  for (std::size_t i = 0; i < count; ++i) {
    ImageAttributes a = random_attributes(spec, rng);
    const int want = static_cast<int>(i % out.classes);
    if (label == ProbeLabel::Shape) a.shape = want;
    if (label == ProbeLabel::Color) a.color = want;
    if (label == ProbeLabel::Quadrant) {
      a.vertical = want / 2;
      a.horizontal = want % 2;
    }
    out.images.push_back(std::make_shared<const Image>(render_image(spec, a, rng)));
    out.labels.push_back(probe_label(a, label));
  }
  return out;
}

struct ProbeOptions {
  std::size_t epochs = 30;
  std::size_t batch = 64;
  double lr = 3e-3;
  double weight_decay = 0.0;
  std::size_t heads = 1;
  std::uint64_t seed = 0;
};

/// Attention pooling with a fresh query, layer norm and a linear layer,
/// trained on frozen (n, tokens, d) features.
class AttentionProbe {
 public:
  AttentionProbe(std::size_t dim, std::size_t classes, const ProbeOptions& opt)
      : ps_(opt.seed),
        pool_(ps_, "probe.pool", dim, opt.heads),
        norm_(ps_, "probe.norm", dim),
        fc_(ps_, "probe.fc", dim, classes) {}

  Tensor<double> logits(const Tensor<double>& feats) const { return fc_(norm_(pool_(feats))); }

  /// Fits on (features, labels) and returns the final mean training loss.
  double fit(const NDArray<double>& feats, const std::vector<int>& labels, const ProbeOptions& opt) {
    const std::size_t n = feats.shape()[0], per = feats.numel() / n;
    AdamW<double> adam(ps_, {0.9, 0.999, 1e-8, opt.weight_decay});
    Rng rng(derive_seed(opt.seed, "probe-order"));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    double last = 0;
    for (std::size_t ep = 0; ep < opt.epochs; ++ep) {
      rng.shuffle(order.begin(), order.end());
      double sum = 0;
      std::size_t batches = 0;
      for (std::size_t s = 0; s < n; s += opt.batch) {
        const std::size_t e = std::min(n, s + opt.batch);
        Shape bs = feats.shape();
        bs[0] = e - s;
        NDArray<double> xb(bs);
        std::vector<std::size_t> yb;
        for (std::size_t i = s; i < e; ++i) {
          std::copy(feats.ptr() + order[i] * per, feats.ptr() + (order[i] + 1) * per, xb.ptr() + (i - s) * per);
          yb.push_back(static_cast<std::size_t>(labels[order[i]]));
        }
        ps_.zero_grad();
        const auto loss = scale(mean_all(take_along_last(log_softmax(logits(Tensor<double>::constant(xb)), -1), yb)), -1.0);
        backward(loss);
        adam.step(ps_, opt.lr);
        sum += loss.item();
        ++batches;
      }
      last = sum / static_cast<double>(batches);
    }
    return last;
  }

  double accuracy(const NDArray<double>& feats, const std::vector<int>& labels) const {
    const auto l = logits(Tensor<double>::constant(feats)).value();
    const std::size_t n = labels.size(), c = l.shape()[1];
    std::size_t hit = 0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      for (std::size_t k = 1; k < c; ++k)
        if (l.at(i, k) > l.at(i, best)) best = k;
      hit += static_cast<int>(best) == labels[i];
    }
    return static_cast<double>(hit) / static_cast<double>(n);
  }

 private:
  nn::ParameterSet<double> ps_;
  nn::AttentionPool<double> pool_;
  nn::LayerNorm<double> norm_;
  nn::Linear<double> fc_;
};

/// Trains a probe on `train` features and reports accuracy on `test`.
inline double train_and_score_probe(const NDArray<double>& train_x, const std::vector<int>& train_y,
                                    const NDArray<double>& test_x, const std::vector<int>& test_y, std::size_t classes,
                                    const ProbeOptions& opt = {}) {
  if (std::set<int>(train_y.begin(), train_y.end()).size() < 2) {
    throw std::invalid_argument("eval_linear_probe: training labels hold a single class");
  }
  AttentionProbe probe(train_x.shape().back(), classes, opt);
  probe.fit(train_x, train_y, opt);
  return probe.accuracy(test_x, test_y);
}

/// Frozen encoder patch latents (n, M+1, d) for a list of images.
template <typename T>
NDArray<double> frozen_latents(const LCLModel<T>& model, const std::vector<ImagePtr>& images, std::size_t chunk = 64) {
  const auto& vc = model.config().vision;
  const std::size_t P = vc.num_patches(), d = vc.hidden_dim;
  NDArray<double> out({images.size(), P, d});
  nn::ForwardContext ctx{};
  for (std::size_t s = 0; s < images.size(); s += chunk) {
    const std::size_t e = std::min(images.size(), s + chunk);
    const std::size_t per = images[s]->numel();
    NDArray<T> px({e - s, vc.channels, vc.image_size, vc.image_size});
    for (std::size_t i = s; i < e; ++i)
      for (std::size_t k = 0; k < per; ++k) px[(i - s) * per + k] = static_cast<T>((*images[i])[k]);
    const auto z = to_double(model.vision().latents(px, ctx));
    std::copy(z.ptr(), z.ptr() + z.numel(), out.ptr() + s * P * d);
  }
  return out;
}

struct ProbeSets {
  LabeledImages train, test;
};

inline ProbeSets make_probe_sets(const CorpusSpec& spec, ProbeLabel label, std::size_t train_count,
                                 std::size_t test_count, std::uint64_t seed) {
  return {make_probe_set(spec, label, train_count, derive_seed(seed, "probe-train")),
          make_probe_set(spec, label, test_count, derive_seed(seed, "probe-test"))};
}

template <typename T>
double eval_linear_probe(const LCLModel<T>& model, const ProbeSets& sets, const ProbeOptions& opt = {}) {
  return train_and_score_probe(frozen_latents(model, sets.train.images), sets.train.labels,
                               frozen_latents(model, sets.test.images), sets.test.labels, sets.train.classes, opt);
}

}  // namespace lcl
