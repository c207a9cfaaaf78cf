#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "lcl/data/sequence.hpp"

namespace lcl {

enum class PackMode { PairRandom, Document, Window };

inline PackMode parse_pack_mode(const std::string& s) {
  if (s == "pair-random") return PackMode::PairRandom;
  if (s == "document") return PackMode::Document;
  if (s == "window") return PackMode::Window;
  throw std::invalid_argument("unknown packing mode '" + s + "' (expected pair-random, document or window)");
}

inline std::string to_string(PackMode m) {
  switch (m) {
    case PackMode::PairRandom: return "pair-random";
    case PackMode::Document: return "document";
    case PackMode::Window: return "window";
  }
  return "?";
}

struct PackOptions {
  std::size_t max_len = 2048;  // counts every position, header and padding included
  std::size_t max_images = 6;
  std::size_t patches_per_image = 16;
  std::uint64_t seed = 0;
  bool randomize_placement = true;  // place each image before or after its caption with equal odds
  bool pad = true;
  SpecialTokens specials;

  std::size_t image_span() const { return patches_per_image + 2; }
};

/// Filter applied to candidate (image, caption) pairs; the synthetic corpus
/// pairs are exact, so the default keeps everything.
using PairFilter = std::function<bool(const ImageRef&)>;
inline bool keep_all_pairs(const ImageRef&) { return true; }

inline ImageRef image_ref(const Document& doc, std::size_t seg) {
  const Segment& s = doc.segments.at(seg);
  if (s.kind != SegmentKind::Image) throw std::invalid_argument("image_ref: segment is not an image");
  ImageRef r;
  r.pixels = s.image;
  r.image_id = segment_uid(doc.id, seg);
  r.attrs = s.attrs;
  r.doc_id = doc.id;
  if (s.paired_segment >= 0) {
    const auto c = static_cast<std::size_t>(s.paired_segment);
    r.caption_id = static_cast<std::int64_t>(segment_uid(doc.id, c));
    r.caption = doc.segments[c].tokens;
  }
  return r;
}

/// Every captioned image of the corpus as an (image, caption) pair.
inline std::vector<ImageRef> extract_pairs(const Corpus& corpus, const PairFilter& keep = keep_all_pairs) {
  std::vector<ImageRef> out;
  for (const auto& d : corpus.docs)
    for (std::size_t i = 0; i < d.segments.size(); ++i) {
      if (d.segments[i].kind != SegmentKind::Image || d.segments[i].paired_segment < 0) continue;
      ImageRef r = image_ref(d, i);
      if (keep(r)) out.push_back(std::move(r));
    }
  return out;
}

/// Each pair becomes [</s>, caption, image] or [</s>, image, caption]; one
/// uniform draw per pair from a single stream, image first when it is < 0.5.
inline std::vector<InterleavedSequence> pack_pair_random(const std::vector<ImageRef>& pairs, const PackOptions& opt) {
  const SpecialTokens& sp = opt.specials;
  if (1 + opt.image_span() > opt.max_len) {
    throw std::length_error("pack_pair_random: image span of " + std::to_string(opt.image_span()) +
                            " positions exceeds max_len " + std::to_string(opt.max_len));
  }
  Rng rng(opt.seed);
  std::vector<InterleavedSequence> out;
  out.reserve(pairs.size());
  for (const auto& pair : pairs) {
    const bool image_first = rng.uniform() < 0.5;
    InterleavedSequence seq;
    seq.append_text(sp.eos);
    const bool caption_fits = seq.slots.size() + pair.caption.size() + (image_first ? opt.image_span() : 0) <= opt.max_len;
    if (image_first) {
      seq.append_image(pair, opt.patches_per_image, sp);
      if (caption_fits) seq.append_tokens(pair.caption);
    } else {
      if (1 + pair.caption.size() > opt.max_len) {
        throw std::length_error("pack_pair_random: caption of " + std::to_string(pair.caption.size()) +
                                " tokens exceeds max_len");
      }
      seq.append_tokens(pair.caption);
      if (seq.slots.size() + opt.image_span() <= opt.max_len) seq.append_image(pair, opt.patches_per_image, sp);
    }
    if (opt.pad) seq.pad_to(opt.max_len);
    out.push_back(std::move(seq));
  }
  return out;
}

/// A whole sentence or a whole image: the atoms that packing never splits.
struct PackUnit {
  bool is_image = false;
  std::vector<std::int32_t> tokens;
  ImageRef image;

  std::size_t span(const PackOptions& opt) const { return is_image ? opt.image_span() : tokens.size(); }
};

/// Document segments after image capping and placement. At most
/// `max_images` images survive, drawn uniformly without replacement and kept
/// in document order; each captioned image is then put directly before or
/// after its caption.
inline std::vector<PackUnit> document_units(const Document& doc, const PackOptions& opt) {
  doc.validate();
  Rng rng(derive_seed(opt.seed, doc.id));
  std::vector<std::size_t> image_idx;
  for (std::size_t i = 0; i < doc.segments.size(); ++i)
    if (doc.segments[i].kind == SegmentKind::Image) image_idx.push_back(i);
  std::vector<bool> keep(doc.segments.size(), false);
  if (image_idx.size() > opt.max_images) {
    rng.shuffle(image_idx.begin(), image_idx.end());
    image_idx.resize(opt.max_images);
  }
  for (auto i : image_idx) keep[i] = true;

  // before[c] / after[c]: images attached to caption segment c.
  std::vector<std::vector<std::size_t>> before(doc.segments.size()), after(doc.segments.size());
  for (std::size_t i = 0; i < doc.segments.size(); ++i) {
    const Segment& s = doc.segments[i];
    if (!keep[i] || s.paired_segment < 0) continue;
    const bool first = opt.randomize_placement ? rng.bernoulli(0.5) : static_cast<std::size_t>(s.paired_segment) > i;
    (first ? before : after)[static_cast<std::size_t>(s.paired_segment)].push_back(i);
  }

  std::vector<PackUnit> units;
  auto push_image = [&](std::size_t i) { units.push_back({true, {}, image_ref(doc, i)}); };
  for (std::size_t i = 0; i < doc.segments.size(); ++i) {
    const Segment& s = doc.segments[i];
    if (s.kind == SegmentKind::Sentence) {
      for (auto j : before[i]) push_image(j);
      units.push_back({false, s.tokens, {}});
      for (auto j : after[i]) push_image(j);
    } else if (keep[i] && s.paired_segment < 0) {
      push_image(i);
    }
  }
  return units;
}

/// One document into one sequence of at most `max_len` positions. Trailing
/// whole units are dropped once the budget is reached; a terminal </s> is
/// added when nothing was dropped and room remains.
inline InterleavedSequence pack_document(const Document& doc, const PackOptions& opt) {
  const SpecialTokens& sp = opt.specials;
  const auto units = document_units(doc, opt);
  for (const auto& u : units) {
    if (1 + u.span(opt) > opt.max_len) {
      throw std::length_error("pack_document: document " + std::to_string(doc.id) + " has a segment of " +
                              std::to_string(u.span(opt)) + " positions, over max_len " + std::to_string(opt.max_len));
    }
  }
  InterleavedSequence seq;
  seq.append_text(sp.eos);
  bool truncated = false;
  for (const auto& u : units) {
    if (seq.slots.size() + u.span(opt) > opt.max_len) {
      truncated = true;
      break;
    }
    if (u.is_image) {
      seq.append_image(u.image, opt.patches_per_image, sp);
    } else {
      seq.append_tokens(u.tokens);
    }
  }
  if (!truncated && seq.slots.size() < opt.max_len) seq.append_text(sp.eos);
  if (opt.pad) seq.pad_to(opt.max_len);
  return seq;
}

/// The concatenated stream that window packing slices: each document's units
/// followed by a terminal </s>.
inline std::vector<PackUnit> window_stream(const std::vector<Document>& docs, const PackOptions& opt) {
  std::vector<PackUnit> stream;
  for (const auto& d : docs) {
    auto units = document_units(d, opt);
    for (auto& u : units) stream.push_back(std::move(u));
    stream.push_back({false, {opt.specials.eos}, {}});
  }
  return stream;
}

/// Fixed windows of `max_len` positions, each opening with a </s> header.
/// Text flows across window boundaries token by token. An image that would
/// straddle a boundary closes the current window (the rest is padding) and
/// opens the next one.
inline std::vector<InterleavedSequence> pack_stream_window(const std::vector<Document>& docs, const PackOptions& opt) {
  const SpecialTokens& sp = opt.specials;
  if (opt.max_len < 2) throw std::length_error("pack_stream_window: window must hold a header and one token");
  std::vector<InterleavedSequence> out;
  InterleavedSequence cur;
  cur.append_text(sp.eos);
  auto flush = [&] {
    if (opt.pad) cur.pad_to(opt.max_len);
    out.push_back(std::move(cur));
    cur = InterleavedSequence{};
    cur.append_text(sp.eos);
  };
  for (const auto& u : window_stream(docs, opt)) {
    if (u.is_image) {
      if (1 + opt.image_span() > opt.max_len) {
        throw std::length_error("pack_stream_window: image span of " + std::to_string(opt.image_span()) +
                                " positions exceeds window " + std::to_string(opt.max_len));
      }
      if (cur.slots.size() + opt.image_span() > opt.max_len) flush();
      cur.append_image(u.image, opt.patches_per_image, sp);
      continue;
    }
    for (auto t : u.tokens) {
      if (cur.slots.size() == opt.max_len) flush();
      cur.append_text(t);
    }
  }
  if (cur.slots.size() > 1) flush();
  return out;
}

inline std::vector<InterleavedSequence> pack_corpus(const Corpus& corpus, PackMode mode, const PackOptions& opt) {
  switch (mode) {
    case PackMode::PairRandom: return pack_pair_random(extract_pairs(corpus), opt);
    case PackMode::Window: return pack_stream_window(corpus.docs, opt);
    case PackMode::Document: break;
  }
  std::vector<InterleavedSequence> out;
  out.reserve(corpus.docs.size());
  for (const auto& d : corpus.docs) out.push_back(pack_document(d, opt));
  return out;
}

}  // namespace lcl
