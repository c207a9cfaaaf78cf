#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "../support/golden_fixtures.hpp"
#include "../support/packing_properties.hpp"
#include "lcl/data/packed_io.hpp"

using namespace lcl;

namespace {

CorpusSpec small_spec(std::size_t docs = 5) {
  CorpusSpec s;
  s.num_docs = docs;
  s.image_size = 8;
  return s;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("lcl_pipeline_" + name)).string();
}

std::vector<std::uint8_t> read_all(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

PackOptions opts(std::size_t max_len, std::size_t patches = 4) {
  PackOptions o;
  o.max_len = max_len;
  o.patches_per_image = patches;
  return o;
}

}  // namespace

TEST(Vocabulary, SpecialsComeFirst) {
  Vocabulary v({"a", "b"});
  EXPECT_EQ(v.id("<pad>"), 0);
  EXPECT_EQ(v.id("</s>"), 1);
  EXPECT_EQ(v.id("<BoI>"), 2);
  EXPECT_EQ(v.id("<EoI>"), 3);
  EXPECT_EQ(v.id("b"), 5);
  EXPECT_THROW(v.id("zzz"), std::out_of_range);
  EXPECT_NO_THROW(v.specials().validate(v.size()));
  SpecialTokens dup;
  dup.boi = dup.eos;
  EXPECT_THROW(dup.validate(10), std::invalid_argument);
}

TEST(CorpusSpec, ParsesAndRejectsUnknownKeys) {
  const auto s = CorpusSpec::parse("num_docs=7\n# note\nshapes=circle, ring\n");
  EXPECT_EQ(s.num_docs, 7u);
  EXPECT_EQ(s.shapes, (std::vector<std::string>{"circle", "ring"}));
  EXPECT_THROW(CorpusSpec::parse("num_doc=7\n"), ConfigError);
  EXPECT_THROW(CorpusSpec::parse("num_docs=seven\n"), ConfigError);
  EXPECT_THROW(CorpusSpec::parse("colors=\n"), std::invalid_argument);
  EXPECT_THROW(CorpusSpec::parse("shapes=hexagon\n"), std::invalid_argument);
  EXPECT_EQ(CorpusSpec::parse(s.to_text()).to_text(), s.to_text());
}

TEST(Corpus, SingleImageNoDistractors) {
  auto spec = small_spec(1);
  spec.min_images = spec.max_images = 1;
  spec.distractor_rate = 0;
  const auto c = generate_synthetic_corpus(spec, 3);
  ASSERT_EQ(c.docs.size(), 1u);
  const auto& segs = c.docs[0].segments;
  ASSERT_EQ(segs.size(), 2u);
  EXPECT_EQ(segs[0].kind, SegmentKind::Sentence);
  EXPECT_EQ(segs[1].kind, SegmentKind::Image);
  EXPECT_EQ(segs[1].paired_segment, 0);
  EXPECT_EQ(segs[0].tokens, caption_tokens(spec, c.vocab, segs[1].attrs));
  EXPECT_EQ(segs[1].image->shape(), (Shape{3, 8, 8}));
}

TEST(Corpus, ImageCountsWithinBounds) {
  auto spec = small_spec(100);
  const auto c = generate_synthetic_corpus(spec, 11);
  std::size_t lo = 99, hi = 0;
  for (const auto& d : c.docs) {
    lo = std::min(lo, d.image_count());
    hi = std::max(hi, d.image_count());
    EXPECT_NO_THROW(d.validate());
  }
  EXPECT_EQ(lo, 1u);
  EXPECT_EQ(hi, 6u);
}

TEST(Corpus, CaptionDescribesItsImage) {
  const auto c = generate_synthetic_corpus(small_spec(20), 5);
  for (const auto& d : c.docs)
    for (const auto& s : d.segments) {
      if (s.kind != SegmentKind::Image) continue;
      const auto& cap = d.segments[static_cast<std::size_t>(s.paired_segment)].tokens;
      EXPECT_EQ(c.vocab.word(cap[1]), c.spec.colors[static_cast<std::size_t>(s.attrs.color)]);
      EXPECT_EQ(c.vocab.word(cap[2]), c.spec.shapes[static_cast<std::size_t>(s.attrs.shape)]);
      for (float x : s.image->data()) {
        EXPECT_GE(x, 0.0f);
        EXPECT_LE(x, 1.0f);
      }
    }
}

TEST(Corpus, ObjectLandsInItsQuadrant) {
  CorpusSpec spec;
  spec.noise = 0;
  Rng rng(4);
  for (std::int32_t v = 0; v < 2; ++v)
    for (std::int32_t h = 0; h < 2; ++h) {
      const auto img = render_image(spec, {0, 0, v, h}, rng);
      double mass[2][2] = {};
      for (std::size_t y = 0; y < 32; ++y)
        for (std::size_t x = 0; x < 32; ++x) mass[y / 16][x / 16] += img.at(0, y, x) - 0.15;
      EXPECT_GT(mass[v][h], 10 * (mass[1 - v][1 - h] + 1e-9));
    }
}

TEST(Corpus, DeterministicBytes) {
  const auto a = serialize_corpus(generate_synthetic_corpus(small_spec(), 42));
  const auto b = serialize_corpus(generate_synthetic_corpus(small_spec(), 42));
  const auto c = serialize_corpus(generate_synthetic_corpus(small_spec(), 43));
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
}

TEST(Corpus, TextOnlySpec) {
  auto spec = small_spec(3);
  spec.min_images = spec.max_images = 0;
  const auto c = generate_synthetic_corpus(spec, 1);
  for (const auto& d : c.docs) {
    EXPECT_EQ(d.image_count(), 0u);
    EXPECT_EQ(d.segments.size(), spec.text_only_sentences);
  }
}

TEST(CorpusIO, RoundTrip) {
  const auto c = generate_synthetic_corpus(small_spec(), 9);
  const auto path = temp_path("corpus.bin");
  save_corpus(c, path);
  const auto back = load_corpus(path);
  EXPECT_EQ(serialize_corpus(back), serialize_corpus(c));
  EXPECT_EQ(back.vocab, c.vocab);
  EXPECT_EQ(back.seed, 9u);
}

TEST(CorpusIO, MatchesGoldenFile) {
  const auto bytes = serialize_corpus(golden::corpus_fixture());
  EXPECT_EQ(bytes, read_all(std::string(LCL_GOLDEN_DIR) + "/corpus_small.bin"));
}

TEST(CorpusIO, TruncationNamesSection) {
  auto bytes = serialize_corpus(generate_synthetic_corpus(small_spec(2), 1));
  for (std::size_t cut : {std::size_t{4}, std::size_t{20}, bytes.size() - 3}) {
    std::vector<std::uint8_t> part(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    try {
      deserialize_corpus(ByteReader(part));
      FAIL() << "truncated corpus accepted";
    } catch (const CorruptFileError& e) {
      EXPECT_FALSE(e.section().empty());
    }
  }
  bytes[0] = 'X';
  try {
    deserialize_corpus(ByteReader(bytes));
    FAIL();
  } catch (const CorruptFileError& e) {
    EXPECT_EQ(e.section(), "header");
  }
}

TEST(PairPacking, FirstDrawDecidesLayout) {
  const auto c = generate_synthetic_corpus(small_spec(4), 2);
  const auto pairs = extract_pairs(c);
  auto o = opts(64);
  o.seed = 123;
  const auto seqs = pack_pair_random(pairs, o);
  Rng rng(123);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const bool image_first = rng.uniform() < 0.5;
    EXPECT_EQ(seqs[i].slots[1].token == 2, image_first) << i;
    EXPECT_EQ(seqs[i].size(), 64u);
  }
}

TEST(PairPacking, ImageFirstFractionNearHalf) {
  ImageRef r;
  r.pixels = std::make_shared<const Image>(Shape{3, 2, 2});
  r.caption = {10, 11};
  std::vector<ImageRef> pairs(10000, r);
  auto o = opts(16, 1);
  o.seed = 77;
  o.pad = false;
  std::size_t first = 0;
  for (const auto& s : pack_pair_random(pairs, o)) first += s.slots[1].token == 2;
  const double frac = static_cast<double>(first) / 10000.0;
  EXPECT_GE(frac, 0.47);
  EXPECT_LE(frac, 0.53);
}

TEST(PairPacking, EmptyCaption) {
  ImageRef r;
  r.pixels = std::make_shared<const Image>(Shape{3, 2, 2});
  const auto seqs = pack_pair_random({r}, opts(10, 3));
  const auto& s = seqs[0];
  ASSERT_EQ(s.slots.size(), 6u);
  EXPECT_EQ(s.slots[0].token, 1);
  EXPECT_EQ(s.slots[1].token, 2);
  for (int i = 2; i < 5; ++i) EXPECT_EQ(s.slots[static_cast<std::size_t>(i)].kind, SlotKind::Patch);
  EXPECT_EQ(s.slots[5].token, 3);
}

TEST(DocumentPacking, CapsImagesKeepingOrder) {
  auto spec = small_spec(1);
  spec.min_images = spec.max_images = 8;
  const auto c = generate_synthetic_corpus(spec, 5);
  auto o = opts(2048);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    o.seed = seed;
    const auto s = pack_document(c.docs[0], o);
    ASSERT_EQ(s.images.size(), 6u);
    for (std::size_t i = 1; i < s.images.size(); ++i) EXPECT_LT(s.images[i - 1].image_id, s.images[i].image_id);
  }
}

TEST(DocumentPacking, FittingDocumentIsOnlyPadded) {
  const auto c = generate_synthetic_corpus(small_spec(1), 8);
  auto o = opts(2048);
  o.randomize_placement = false;
  const auto s = pack_document(c.docs[0], o);
  EXPECT_EQ(s.size(), 2048u);
  std::size_t expect = 2;  // header and terminal </s>
  for (const auto& seg : c.docs[0].segments) expect += seg.kind == SegmentKind::Image ? 6 : seg.tokens.size();
  EXPECT_EQ(s.slots.size(), expect);
  EXPECT_EQ(s.slots.back().token, 1);
}

TEST(DocumentPacking, BoundaryInsideImageDropsWholeSpan) {
  Document d;
  d.id = 1;
  d.segments.push_back(Segment::sentence({5, 6, 7}));
  Segment img;
  img.kind = SegmentKind::Image;
  img.image = std::make_shared<const Image>(Shape{3, 2, 2});
  img.paired_segment = 0;
  d.segments.push_back(img);
  auto o = opts(8, 4);  // header + 3 words + 6-slot image = 10 > 8
  o.randomize_placement = false;
  const auto s = pack_document(d, o);
  EXPECT_EQ(s.slots.size(), 4u);
  EXPECT_TRUE(s.images.empty());
  EXPECT_NO_THROW(s.validate(4, {}));
  o.max_len = 6;  // the image alone needs 1 + 6
  EXPECT_THROW(pack_document(d, o), std::length_error);
}

TEST(WindowPacking, ShortStreamGivesOnePaddedWindow) {
  const auto c = generate_synthetic_corpus(small_spec(1), 3);
  const auto w = pack_stream_window(c.docs, opts(2048));
  ASSERT_EQ(w.size(), 1u);
  EXPECT_EQ(w[0].size(), 2048u);
}

TEST(WindowPacking, StraddlingImageMovesToNextWindow) {
  Document d;
  d.segments.push_back(Segment::sentence({5, 6, 7, 8, 9}));
  Segment img;
  img.kind = SegmentKind::Image;
  img.image = std::make_shared<const Image>(Shape{3, 2, 2});
  d.segments.push_back(img);
  d.segments.push_back(Segment::sentence({10}));
  auto o = opts(10, 2);  // header + 5 words leaves 4 slots, image needs 4: fits
  auto w = pack_stream_window({d}, o);
  ASSERT_EQ(w.size(), 2u);
  EXPECT_EQ(w[0].images.size(), 1u);
  o.max_len = 9;  // now 3 slots remain, image deferred
  w = pack_stream_window({d}, o);
  ASSERT_EQ(w.size(), 2u);
  EXPECT_EQ(w[0].slots.size(), 6u);
  EXPECT_TRUE(w[0].images.empty());
  EXPECT_EQ(w[1].slots[1].token, 2);
  EXPECT_EQ(w[1].images.size(), 1u);
  o.max_len = 4;
  EXPECT_THROW(pack_stream_window({d}, o), std::length_error);
}

TEST(PackingProperties, ThousandRandomCases) {
  proptest::PackingStats stats;
  EXPECT_EQ(proptest::run_packing_properties(1000, 2024, stats), "");
  EXPECT_EQ(stats.cases, 1000u);
  EXPECT_GT(stats.straddles, 100u);
  EXPECT_GT(stats.rejections, 0u);
}

TEST(PackingProperties, PackersAreDeterministic) {
  const auto c = generate_synthetic_corpus(small_spec(6), 12);
  auto o = opts(40, 4);
  o.seed = 5;
  for (auto mode : {PackMode::PairRandom, PackMode::Document, PackMode::Window}) {
    PackedFile a{mode, o, c.vocab.size(), pack_corpus(c, mode, o)};
    PackedFile b{mode, o, c.vocab.size(), pack_corpus(c, mode, o)};
    EXPECT_EQ(serialize_packed(a), serialize_packed(b));
  }
}

TEST(PackingProperties, PairingRecoverableFromEveryPacker) {
  const auto c = generate_synthetic_corpus(small_spec(10), 13);
  auto o = opts(2048, 4);
  for (auto mode : {PackMode::PairRandom, PackMode::Document, PackMode::Window}) {
    for (const auto& s : pack_corpus(c, mode, o))
      for (const auto& ref : s.images) {
        const auto& doc = c.docs[ref.doc_id];
        const auto& seg = doc.segments[ref.image_id & 0xffff];
        ASSERT_EQ(seg.kind, SegmentKind::Image);
        EXPECT_EQ(ref.caption_id, static_cast<std::int64_t>(segment_uid(doc.id, static_cast<std::size_t>(seg.paired_segment))));
        EXPECT_EQ(ref.caption, doc.segments[static_cast<std::size_t>(seg.paired_segment)].tokens);
      }
  }
}

TEST(PackedIO, RoundTripAndGolden) {
  const PackedFile f = golden::packed_fixture();
  const auto bytes = serialize_packed(f);
  const auto back = deserialize_packed(ByteReader(bytes));
  EXPECT_EQ(serialize_packed(back), bytes);
  EXPECT_EQ(bytes, read_all(std::string(LCL_GOLDEN_DIR) + "/packed_small.bin"));
  std::vector<std::uint8_t> cut(bytes.begin(), bytes.end() - 10);
  EXPECT_THROW(deserialize_packed(ByteReader(cut)), CorruptFileError);
}

TEST(Collate, SingleSequence) {
  const auto c = generate_synthetic_corpus(small_spec(1), 2);
  const auto s = pack_document(c.docs[0], opts(2048));
  const auto b = collate_batch({s}, {2048, 4, true, {}});
  EXPECT_EQ(b.rows, 1u);
  EXPECT_EQ(b.width, s.slots.size());
  EXPECT_EQ(b.num_images(), s.images.size());
  for (std::size_t i = 0; i < s.images.size(); ++i) EXPECT_EQ(b.images[i].boi, s.images[i].boi_pos);
  for (std::size_t cidx = 0; cidx < b.width; ++cidx) EXPECT_EQ(b.pad_mask.at(0, cidx), 0);
}

TEST(Collate, MixedLengthsPadRow) {
  InterleavedSequence a, b;
  a.append_text(1);
  for (int i = 0; i < 9; ++i) a.append_text(5);
  b.append_text(1);
  for (int i = 0; i < 19; ++i) b.append_text(6);
  const auto batch = collate_batch({a, b}, {2048, 4, true, {}});
  EXPECT_EQ(batch.width, 20u);
  std::size_t pads = 0;
  for (std::size_t c = 0; c < 20; ++c) pads += batch.pad_mask.at(0, c);
  EXPECT_EQ(pads, 10u);
  EXPECT_EQ(batch.target_count(), 9u + 19u);
}

TEST(Collate, SpecialsTargetSwitch) {
  InterleavedSequence s;
  s.append_text(1);
  s.append_text(7);
  ImageRef r;
  r.pixels = std::make_shared<const Image>(Shape{3, 2, 2});
  s.append_image(r, 2, {});
  s.append_text(1);
  auto on = collate_batch({s}, {64, 2, true, {}});
  auto off = collate_batch({s}, {64, 2, false, {}});
  EXPECT_EQ(on.target_count(), 4u);   // word, <BoI>, <EoI>, </s>
  EXPECT_EQ(off.target_count(), 1u);  // word only
  EXPECT_EQ(on.patch_of[3], 0);
  EXPECT_EQ(on.patch_of[4], 1);
}

TEST(Collate, RejectsOverflow) {
  InterleavedSequence s;
  for (int i = 0; i < 10; ++i) s.append_text(1);
  EXPECT_THROW(collate_batch({s}, {8, 4, true, {}}), std::length_error);
}
