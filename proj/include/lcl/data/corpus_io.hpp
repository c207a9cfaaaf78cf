#pragma once

#include <string>

#include "lcl/core/binary_io.hpp"
#include "lcl/data/corpus.hpp"

namespace lcl {

inline constexpr char kCorpusMagic[9] = "LCLCORP1";
inline constexpr std::uint32_t kCorpusVersion = 1;

namespace detail {

inline void write_image(ByteWriter& w, const Image& img) {
  w.put(static_cast<std::uint32_t>(img.rank()));
  for (auto d : img.shape()) w.put(static_cast<std::uint32_t>(d));
  for (float x : img.data()) w.put(x);
}

inline Image read_image(ByteReader& r) {
  const auto rank = r.get<std::uint32_t>();
  if (rank == 0 || rank > 4) r.fail("image rank " + std::to_string(rank) + " not in [1, 4]");
  Shape s(rank);
  std::size_t n = 1;
  for (auto& d : s) {
    d = r.get<std::uint32_t>();
    n *= d;
  }
  if (n * 4 > r.remaining()) r.fail("image of shape " + shape_str(s) + " runs past end of file");
  std::vector<float> data(n);
  for (auto& x : data) x = r.get<float>();
  return Image(std::move(s), std::move(data));
}

}  // namespace detail

inline std::vector<std::uint8_t> serialize_corpus(const Corpus& c) {
  ByteWriter w;
  w.put_bytes(kCorpusMagic, 8);
  w.put(kCorpusVersion);
  std::string manifest = "num_docs=" + std::to_string(c.docs.size()) + "\nseed=" + std::to_string(c.seed) +
                         "\nvocab_size=" + std::to_string(c.vocab.size()) + "\nvocab=";
  for (std::size_t i = 0; i < c.vocab.size(); ++i) manifest += (i ? "," : "") + c.vocab.words()[i];
  manifest += "\n";
  std::string spec = c.spec.to_text();
  for (const auto& line : split(spec, '\n')) manifest += "spec." + line + "\n";
  w.put_text(manifest);
  w.put(static_cast<std::uint64_t>(c.docs.size()));
  for (const auto& d : c.docs) {
    w.put(d.id);
    w.put(static_cast<std::uint32_t>(d.segments.size()));
    for (const auto& s : d.segments) {
      w.put(static_cast<std::uint8_t>(s.kind));
      if (s.kind == SegmentKind::Sentence) {
        w.put(static_cast<std::uint32_t>(s.tokens.size()));
        for (auto t : s.tokens) w.put(t);
      } else {
        w.put(s.paired_segment);
        w.put(s.attrs.color);
        w.put(s.attrs.shape);
        w.put(s.attrs.vertical);
        w.put(s.attrs.horizontal);
        detail::write_image(w, *s.image);
      }
    }
  }
  return w.bytes();
}

inline void save_corpus(const Corpus& c, const std::string& path) {
  write_bytes(path, serialize_corpus(c));
}

inline Corpus deserialize_corpus(ByteReader r) {
  r.section("header");
  r.expect_magic(kCorpusMagic);
  const auto version = r.get<std::uint32_t>();
  if (version != kCorpusVersion) r.fail("unsupported version " + std::to_string(version));
  r.section("manifest");
  KeyValues kv;
  try {
    kv = KeyValues::parse(r.get_text(), "corpus manifest");
  } catch (const ConfigError& e) {
    r.fail(e.what());
  }
  Corpus c;
  std::string spec_text;
  for (const auto& k : kv.keys())
    if (k.rfind("spec.", 0) == 0) spec_text += k.substr(5) + "=" + kv.raw(k) + "\n";
  try {
    c.spec = CorpusSpec::parse(spec_text, "corpus manifest");
    c.seed = std::stoull(kv.raw("seed"));
    c.vocab = Vocabulary(split(kv.raw("vocab"), ','));
    if (c.vocab.size() != std::stoull(kv.raw("vocab_size"))) r.fail("vocab_size does not match vocab list");
  } catch (const CorruptFileError&) {
    throw;
  } catch (const std::exception& e) {
    r.fail(e.what());
  }
  r.section("documents");
  const auto n_docs = r.get<std::uint64_t>();
  if (n_docs != std::stoull(kv.raw("num_docs"))) r.fail("document count disagrees with manifest");
  for (std::uint64_t di = 0; di < n_docs; ++di) {
    r.section("document " + std::to_string(di));
    Document d;
    d.id = r.get<std::uint64_t>();
    const auto n_seg = r.get<std::uint32_t>();
    if (n_seg == 0) r.fail("document with no segments");
    for (std::uint32_t si = 0; si < n_seg; ++si) {
      Segment s;
      const auto kind = r.get<std::uint8_t>();
      if (kind > 1) r.fail("unknown segment kind " + std::to_string(kind));
      s.kind = static_cast<SegmentKind>(kind);
      if (s.kind == SegmentKind::Sentence) {
        const auto n = r.get<std::uint32_t>();
        if (std::size_t{n} * 4 > r.remaining()) r.fail("sentence runs past end of file");
        s.tokens.resize(n);
        for (auto& t : s.tokens) {
          t = r.get<std::int32_t>();
          if (t < 0 || static_cast<std::size_t>(t) >= c.vocab.size()) r.fail("token id " + std::to_string(t) + " out of range");
        }
      } else {
        s.paired_segment = r.get<std::int32_t>();
        s.attrs.color = r.get<std::int32_t>();
        s.attrs.shape = r.get<std::int32_t>();
        s.attrs.vertical = r.get<std::int32_t>();
        s.attrs.horizontal = r.get<std::int32_t>();
        s.image = std::make_shared<const Image>(detail::read_image(r));
      }
      d.segments.push_back(std::move(s));
    }
    try {
      d.validate();
    } catch (const std::exception& e) {
      r.fail(e.what());
    }
    c.docs.push_back(std::move(d));
  }
  r.section("trailer");
  if (!r.at_end()) r.fail(std::to_string(r.remaining()) + " trailing bytes");
  return c;
}

inline Corpus load_corpus(const std::string& path) { return deserialize_corpus(ByteReader::from_file(path)); }

}  // namespace lcl
