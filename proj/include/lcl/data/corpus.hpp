#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "lcl/core/keyvalue.hpp"
#include "lcl/core/ndarray.hpp"
#include "lcl/core/random.hpp"
#include "lcl/data/vocab.hpp"

namespace lcl {

inline const std::vector<std::string>& known_colors() {
  static const std::vector<std::string> v = {"red", "green", "blue", "yellow", "cyan", "magenta", "white", "orange"};
  return v;
}

inline const std::vector<std::string>& known_shapes() {
  static const std::vector<std::string> v = {"circle", "square", "triangle", "plus", "ring", "diamond", "bar", "cross"};
  return v;
}

inline const std::vector<std::string>& filler_words() {
  static const std::vector<std::string> v = {
      "the", "is", "of", "and", "in", "on", "this", "that", "with", "page", "photo", "shows", "here", "some", "we",
      "see", "it", "was", "very", "nice", "day", "more", "next", "picture", "look", "one", "story", "for", "our",
      "new", "old", "just", "like", "then", "what", "about", "there", "good"};
  return v;
}

struct CorpusSpec {
  std::size_t num_docs = 2000;
  std::size_t image_size = 32;
  std::size_t channels = 3;
  std::size_t min_images = 1;
  std::size_t max_images = 6;
  double distractor_rate = 0.5;  // chance of an unrelated sentence before each caption
  std::size_t min_distractor_words = 3;
  std::size_t max_distractor_words = 8;
  std::size_t text_only_sentences = 4;  // sentences per document when max_images = 0
  double noise = 0.05;
  std::vector<std::string> colors = known_colors();
  std::vector<std::string> shapes = {"circle", "square", "triangle", "plus"};

  void validate() const {
    if (colors.empty() || shapes.empty()) throw std::invalid_argument("corpus spec: empty vocabulary");
    for (const auto& c : colors)
      if (std::find(known_colors().begin(), known_colors().end(), c) == known_colors().end())
        throw std::invalid_argument("corpus spec: unknown color '" + c + "'");
    for (const auto& s : shapes)
      if (std::find(known_shapes().begin(), known_shapes().end(), s) == known_shapes().end())
        throw std::invalid_argument("corpus spec: unknown shape '" + s + "'");
    if (num_docs == 0) throw std::invalid_argument("corpus spec: num_docs must be positive");
    if (min_images > max_images) throw std::invalid_argument("corpus spec: min_images > max_images");
    if (max_images == 0 && text_only_sentences == 0) throw std::invalid_argument("corpus spec: documents would be empty");
    if (image_size < 8 || image_size % 2 != 0) throw std::invalid_argument("corpus spec: image_size must be even and >= 8");
    if (channels != 3) throw std::invalid_argument("corpus spec: only 3-channel images are rendered");
    if (!(distractor_rate >= 0 && distractor_rate <= 1)) throw std::invalid_argument("corpus spec: distractor_rate not in [0, 1]");
    if (min_distractor_words == 0 || min_distractor_words > max_distractor_words)
      throw std::invalid_argument("corpus spec: bad distractor word range");
    if (!(noise >= 0)) throw std::invalid_argument("corpus spec: noise must be non-negative");
  }

  static CorpusSpec parse(const std::string& text, const std::string& source = "<corpus spec>") {
    KeyValues kv = KeyValues::parse(text, source);
    CorpusSpec s;
    kv.read("num_docs", s.num_docs);
    kv.read("image_size", s.image_size);
    kv.read("channels", s.channels);
    kv.read("min_images", s.min_images);
    kv.read("max_images", s.max_images);
    kv.read("distractor_rate", s.distractor_rate);
    kv.read("min_distractor_words", s.min_distractor_words);
    kv.read("max_distractor_words", s.max_distractor_words);
    kv.read("text_only_sentences", s.text_only_sentences);
    kv.read("noise", s.noise);
    if (kv.has("colors")) {
      s.colors.clear();
      kv.read_list("colors", s.colors);
    }
    if (kv.has("shapes")) {
      s.shapes.clear();
      kv.read_list("shapes", s.shapes);
    }
    kv.finish();
    s.validate();
    return s;
  }

  static CorpusSpec load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read corpus spec '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path);
  }

  std::string to_text() const {
    std::ostringstream o;
    o.precision(17);
    auto join = [](const std::vector<std::string>& v) {
      std::string s;
      for (const auto& w : v) s += (s.empty() ? "" : ",") + w;
      return s;
    };
    o << "num_docs=" << num_docs << "\nimage_size=" << image_size << "\nchannels=" << channels
      << "\nmin_images=" << min_images << "\nmax_images=" << max_images << "\ndistractor_rate=" << distractor_rate
      << "\nmin_distractor_words=" << min_distractor_words << "\nmax_distractor_words=" << max_distractor_words
      << "\ntext_only_sentences=" << text_only_sentences << "\nnoise=" << noise << "\ncolors=" << join(colors)
      << "\nshapes=" << join(shapes) << "\n";
    return o.str();
  }

  Vocabulary vocabulary() const {
    std::vector<std::string> words = {"a", "top", "bottom", "left", "right", "."};
    words.insert(words.end(), colors.begin(), colors.end());
    words.insert(words.end(), shapes.begin(), shapes.end());
    words.insert(words.end(), filler_words().begin(), filler_words().end());
    return Vocabulary(words);
  }

  std::size_t num_attribute_combinations() const { return colors.size() * shapes.size() * 4; }
};

/// Indices into the spec's color and shape lists plus the quadrant.
struct ImageAttributes {
  std::int32_t color = 0;
  std::int32_t shape = 0;
  std::int32_t vertical = 0;    // 0 top, 1 bottom
  std::int32_t horizontal = 0;  // 0 left, 1 right

  friend bool operator==(const ImageAttributes&, const ImageAttributes&) = default;

  /// Dense index in [0, colors * shapes * 4).
  std::size_t combination(std::size_t num_shapes) const {
    return ((static_cast<std::size_t>(color) * num_shapes + static_cast<std::size_t>(shape)) * 2 +
            static_cast<std::size_t>(vertical)) * 2 + static_cast<std::size_t>(horizontal);
  }

  static ImageAttributes from_combination(std::size_t c, std::size_t num_shapes) {
    ImageAttributes a;
    a.horizontal = static_cast<std::int32_t>(c % 2);
    c /= 2;
    a.vertical = static_cast<std::int32_t>(c % 2);
    c /= 2;
    a.shape = static_cast<std::int32_t>(c % num_shapes);
    a.color = static_cast<std::int32_t>(c / num_shapes);
    return a;
  }
};

using Image = NDArray<float>;
using ImagePtr = std::shared_ptr<const Image>;

enum class SegmentKind : std::uint8_t { Sentence = 0, Image = 1 };

struct Segment {
  SegmentKind kind = SegmentKind::Sentence;
  std::vector<std::int32_t> tokens;  // Sentence
  ImagePtr image;                    // Image, (C, H, W) in [0, 1]
  ImageAttributes attrs;             // Image
  std::int32_t paired_segment = -1;  // Image: index of its caption in the same document, or -1

  static Segment sentence(std::vector<std::int32_t> t) {
    Segment s;
    s.tokens = std::move(t);
    return s;
  }
};

struct Document {
  std::uint64_t id = 0;
  std::vector<Segment> segments;

  std::size_t image_count() const {
    return static_cast<std::size_t>(std::count_if(segments.begin(), segments.end(),
                                                  [](const Segment& s) { return s.kind == SegmentKind::Image; }));
  }

  void validate() const {
    if (segments.empty()) throw std::invalid_argument("document " + std::to_string(id) + " has no segments");
    for (std::size_t i = 0; i < segments.size(); ++i) {
      const auto& s = segments[i];
      if (s.kind != SegmentKind::Image) continue;
      if (!s.image) throw std::invalid_argument("document " + std::to_string(id) + ": image segment without pixels");
      if (s.paired_segment >= 0 && (static_cast<std::size_t>(s.paired_segment) >= segments.size() ||
                                    segments[static_cast<std::size_t>(s.paired_segment)].kind != SegmentKind::Sentence)) {
        throw std::invalid_argument("document " + std::to_string(id) + ": segment " + std::to_string(i) +
                                    " pairs with a non-sentence segment");
      }
    }
  }
};

struct Corpus {
  CorpusSpec spec;
  Vocabulary vocab;
  std::uint64_t seed = 0;
  std::vector<Document> docs;
};

/// Stable identifiers for images and captions: document id in the high bits,
/// segment index in the low 16.
inline std::uint64_t segment_uid(std::uint64_t doc_id, std::size_t segment) { return (doc_id << 16) | segment; }

inline std::vector<std::int32_t> caption_tokens(const CorpusSpec& spec, const Vocabulary& vocab,
                                                const ImageAttributes& a) {
  return {vocab.id("a"),
          vocab.id(spec.colors.at(static_cast<std::size_t>(a.color))),
          vocab.id(spec.shapes.at(static_cast<std::size_t>(a.shape))),
          vocab.id(a.vertical == 0 ? "top" : "bottom"),
          vocab.id(a.horizontal == 0 ? "left" : "right"),
          vocab.id(".")};
}

namespace detail {

inline std::array<float, 3> color_rgb(const std::string& name) {
  if (name == "red") return {1.0f, 0.1f, 0.1f};
  if (name == "green") return {0.1f, 0.85f, 0.1f};
  if (name == "blue") return {0.15f, 0.3f, 1.0f};
  if (name == "yellow") return {1.0f, 0.95f, 0.1f};
  if (name == "cyan") return {0.1f, 0.95f, 0.95f};
  if (name == "magenta") return {0.95f, 0.1f, 0.95f};
  if (name == "white") return {1.0f, 1.0f, 1.0f};
  return {1.0f, 0.55f, 0.05f};  // orange
}

/// Shape membership in coordinates normalized by the object radius.
inline bool inside_shape(const std::string& shape, double dx, double dy) {
  const double ax = std::abs(dx), ay = std::abs(dy);
  if (shape == "circle") return dx * dx + dy * dy <= 1.0;
  if (shape == "square") return ax <= 0.8 && ay <= 0.8;
  if (shape == "triangle") return dy >= -0.9 && dy <= 0.8 && ax <= (dy + 0.9) / 1.7;
  if (shape == "plus") return (ax <= 0.3 && ay <= 0.95) || (ay <= 0.3 && ax <= 0.95);
  if (shape == "ring") {
    const double r2 = dx * dx + dy * dy;
    return r2 <= 1.0 && r2 >= 0.3;
  }
  if (shape == "diamond") return ax + ay <= 1.0;
  if (shape == "bar") return ay <= 0.3 && ax <= 0.95;
  return ax <= 0.9 && ay <= 0.9 && (std::abs(dx - dy) <= 0.35 || std::abs(dx + dy) <= 0.35);  // cross
}

}  // namespace detail

/// Draws one colored shape into the chosen quadrant of a noisy dark canvas.
inline Image render_image(const CorpusSpec& spec, const ImageAttributes& a, Rng& rng) {
  const std::size_t s = spec.image_size;
  Image img({spec.channels, s, s});
  for (auto& x : img.data()) x = static_cast<float>(std::clamp(0.15 + spec.noise * rng.normal(), 0.0, 1.0));
  const double half = static_cast<double>(s) / 2.0;
  const double radius = half * rng.uniform(0.34, 0.44);
  const double jitter = static_cast<double>(s) / 32.0;
  const double cy = half * (a.vertical + 0.5) + rng.uniform(-jitter, jitter);
  const double cx = half * (a.horizontal + 0.5) + rng.uniform(-jitter, jitter);
  auto rgb = detail::color_rgb(spec.colors.at(static_cast<std::size_t>(a.color)));
  for (auto& c : rgb) c = std::clamp(c + static_cast<float>(rng.uniform(-0.05, 0.05)), 0.0f, 1.0f);
  const std::string& shape = spec.shapes.at(static_cast<std::size_t>(a.shape));
  for (std::size_t y = 0; y < s; ++y)
    for (std::size_t x = 0; x < s; ++x) {
      const double dy = (static_cast<double>(y) + 0.5 - cy) / radius;
      const double dx = (static_cast<double>(x) + 0.5 - cx) / radius;
      if (!detail::inside_shape(shape, dx, dy)) continue;
      for (std::size_t ch = 0; ch < spec.channels; ++ch) {
        img.at(ch, y, x) = std::clamp(rgb[ch] + static_cast<float>(spec.noise * rng.normal()), 0.0f, 1.0f);
      }
    }
  return img;
}

inline ImageAttributes random_attributes(const CorpusSpec& spec, Rng& rng) {
  ImageAttributes a;
  a.color = static_cast<std::int32_t>(rng.below(spec.colors.size()));
  a.shape = static_cast<std::int32_t>(rng.below(spec.shapes.size()));
  a.vertical = static_cast<std::int32_t>(rng.below(2));
  a.horizontal = static_cast<std::int32_t>(rng.below(2));
  return a;
}

inline std::vector<std::int32_t> distractor_sentence(const CorpusSpec& spec, const Vocabulary& vocab, Rng& rng) {
  const auto n = static_cast<std::size_t>(
      rng.between(static_cast<std::int64_t>(spec.min_distractor_words), static_cast<std::int64_t>(spec.max_distractor_words)));
  std::vector<std::int32_t> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(vocab.id(filler_words()[rng.below(filler_words().size())]));
  out.push_back(vocab.id("."));
  return out;
}

/// One document in canonical order: for each image an optional distractor
/// sentence, then its caption, then the image.
inline Document generate_document(const CorpusSpec& spec, const Vocabulary& vocab, std::uint64_t seed,
                                  std::uint64_t doc_id) {
  Rng rng(derive_seed(seed, doc_id));
  Document doc;
  doc.id = doc_id;
  if (spec.max_images == 0) {
    for (std::size_t i = 0; i < spec.text_only_sentences; ++i)
      doc.segments.push_back(Segment::sentence(distractor_sentence(spec, vocab, rng)));
    return doc;
  }
  const auto n_images = static_cast<std::size_t>(
      rng.between(static_cast<std::int64_t>(spec.min_images), static_cast<std::int64_t>(spec.max_images)));
  for (std::size_t i = 0; i < n_images; ++i) {
    if (rng.bernoulli(spec.distractor_rate)) doc.segments.push_back(Segment::sentence(distractor_sentence(spec, vocab, rng)));
    const ImageAttributes attrs = random_attributes(spec, rng);
    doc.segments.push_back(Segment::sentence(caption_tokens(spec, vocab, attrs)));
    Segment img;
    img.kind = SegmentKind::Image;
    img.attrs = attrs;
    img.image = std::make_shared<const Image>(render_image(spec, attrs, rng));
    img.paired_segment = static_cast<std::int32_t>(doc.segments.size() - 1);
    doc.segments.push_back(std::move(img));
  }
  return doc;
}

/// Each document draws from its own stream derived from (seed, doc index), so
/// documents can be produced independently and in any order.
inline Corpus generate_synthetic_corpus(const CorpusSpec& spec, std::uint64_t seed) {
  spec.validate();
  Corpus c{spec, spec.vocabulary(), seed, {}};
  c.docs.reserve(spec.num_docs);
  for (std::size_t d = 0; d < spec.num_docs; ++d) c.docs.push_back(generate_document(spec, c.vocab, seed, d));
  return c;
}

/// Held-out (image, caption) pairs with pairwise distinct attribute
/// combinations, rendered from a stream independent of any training corpus.
struct EvalPair {
  ImagePtr image;
  std::vector<std::int32_t> caption;
  ImageAttributes attrs;
};

inline std::vector<EvalPair> make_eval_pairs(const CorpusSpec& spec, const Vocabulary& vocab, std::size_t count,
                                             std::uint64_t seed) {
  const std::size_t combos = spec.num_attribute_combinations();
  if (count > combos) {
    throw std::invalid_argument("eval set of " + std::to_string(count) + " exceeds " + std::to_string(combos) +
                                " distinct attribute combinations");
  }
  Rng rng(derive_seed(seed, "eval-pairs"));
  std::vector<std::size_t> ids(combos);
  for (std::size_t i = 0; i < combos; ++i) ids[i] = i;
  rng.shuffle(ids.begin(), ids.end());
  ids.resize(count);
  std::vector<EvalPair> out;
  for (auto id : ids) {
    const auto a = ImageAttributes::from_combination(id, spec.shapes.size());
    out.push_back({std::make_shared<const Image>(render_image(spec, a, rng)), caption_tokens(spec, vocab, a), a});
  }
  return out;
}

}  // namespace lcl
