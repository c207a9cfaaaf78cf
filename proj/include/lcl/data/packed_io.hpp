#pragma once

#include <string>
#include <unordered_map>

#include "lcl/data/corpus_io.hpp"
#include "lcl/data/packing.hpp"

namespace lcl {

inline constexpr char kPackedMagic[9] = "LCLPACK1";
inline constexpr std::uint32_t kPackedVersion = 1;

struct PackedFile {
  PackMode mode = PackMode::Document;
  PackOptions options;
  std::size_t vocab_size = 0;
  std::vector<InterleavedSequence> sequences;
};

inline std::vector<std::uint8_t> serialize_packed(const PackedFile& f) {
  ByteWriter w;
  w.put_bytes(kPackedMagic, 8);
  w.put(kPackedVersion);
  w.put_text("mode=" + to_string(f.mode) + "\nmax_len=" + std::to_string(f.options.max_len) +
             "\nmax_images=" + std::to_string(f.options.max_images) +
             "\npatches_per_image=" + std::to_string(f.options.patches_per_image) +
             "\nseed=" + std::to_string(f.options.seed) + "\nvocab_size=" + std::to_string(f.vocab_size) +
             "\nnum_sequences=" + std::to_string(f.sequences.size()) + "\n");
  w.put(static_cast<std::uint64_t>(f.sequences.size()));
  for (const auto& s : f.sequences) {
    w.put(static_cast<std::uint32_t>(s.padded_length));
    w.put(static_cast<std::uint32_t>(s.slots.size()));
    for (const auto& slot : s.slots) {
      w.put(static_cast<std::uint8_t>(slot.kind));
      w.put(slot.token);
      w.put(slot.image);
    }
    w.put(static_cast<std::uint32_t>(s.images.size()));
    for (const auto& im : s.images) {
      w.put(im.image_id);
      w.put(im.caption_id);
      w.put(im.doc_id);
      w.put(static_cast<std::uint32_t>(im.boi_pos));
      w.put(im.attrs.color);
      w.put(im.attrs.shape);
      w.put(im.attrs.vertical);
      w.put(im.attrs.horizontal);
      w.put(static_cast<std::uint32_t>(im.caption.size()));
      for (auto t : im.caption) w.put(t);
      detail::write_image(w, *im.pixels);
    }
  }
  return w.bytes();
}

inline void save_packed(const PackedFile& f, const std::string& path) { write_bytes(path, serialize_packed(f)); }

inline PackedFile deserialize_packed(ByteReader r) {
  r.section("header");
  r.expect_magic(kPackedMagic);
  const auto version = r.get<std::uint32_t>();
  if (version != kPackedVersion) r.fail("unsupported version " + std::to_string(version));
  r.section("manifest");
  PackedFile f;
  std::uint64_t declared = 0;
  try {
    KeyValues kv = KeyValues::parse(r.get_text(), "packed manifest");
    std::string mode;
    kv.read("mode", mode);
    f.mode = parse_pack_mode(mode);
    kv.read("max_len", f.options.max_len);
    kv.read("max_images", f.options.max_images);
    kv.read("patches_per_image", f.options.patches_per_image);
    kv.read("seed", f.options.seed);
    kv.read("vocab_size", f.vocab_size);
    kv.read("num_sequences", declared);
    kv.finish();
  } catch (const std::exception& e) {
    r.fail(e.what());
  }
  r.section("sequences");
  const auto n = r.get<std::uint64_t>();
  if (n != declared) r.fail("sequence count disagrees with manifest");
  std::unordered_map<std::uint64_t, ImagePtr> pixels;
  for (std::uint64_t i = 0; i < n; ++i) {
    r.section("sequence " + std::to_string(i));
    InterleavedSequence s;
    s.padded_length = r.get<std::uint32_t>();
    const auto n_slots = r.get<std::uint32_t>();
    if (std::size_t{n_slots} * 9 > r.remaining()) r.fail("slot table runs past end of file");
    s.slots.resize(n_slots);
    for (auto& slot : s.slots) {
      const auto kind = r.get<std::uint8_t>();
      if (kind > 2) r.fail("unknown slot kind " + std::to_string(kind));
      slot.kind = static_cast<SlotKind>(kind);
      slot.token = r.get<std::int32_t>();
      slot.image = r.get<std::int32_t>();
      if (slot.kind == SlotKind::Text && (slot.token < 0 || static_cast<std::size_t>(slot.token) >= f.vocab_size))
        r.fail("token id " + std::to_string(slot.token) + " out of range");
    }
    const auto n_images = r.get<std::uint32_t>();
    for (std::uint32_t k = 0; k < n_images; ++k) {
      ImageRef im;
      im.image_id = r.get<std::uint64_t>();
      im.caption_id = r.get<std::int64_t>();
      im.doc_id = r.get<std::uint64_t>();
      im.boi_pos = r.get<std::uint32_t>();
      im.attrs.color = r.get<std::int32_t>();
      im.attrs.shape = r.get<std::int32_t>();
      im.attrs.vertical = r.get<std::int32_t>();
      im.attrs.horizontal = r.get<std::int32_t>();
      const auto n_cap = r.get<std::uint32_t>();
      if (std::size_t{n_cap} * 4 > r.remaining()) r.fail("caption runs past end of file");
      im.caption.resize(n_cap);
      for (auto& t : im.caption) t = r.get<std::int32_t>();
      Image px = detail::read_image(r);
      auto it = pixels.find(im.image_id);
      if (it != pixels.end() && *it->second == px) {
        im.pixels = it->second;
      } else {
        im.pixels = std::make_shared<const Image>(std::move(px));
        pixels[im.image_id] = im.pixels;
      }
      s.images.push_back(std::move(im));
    }
    try {
      s.validate(f.options.patches_per_image, f.options.specials);
    } catch (const std::exception& e) {
      r.fail(e.what());
    }
    f.sequences.push_back(std::move(s));
  }
  r.section("trailer");
  if (!r.at_end()) r.fail(std::to_string(r.remaining()) + " trailing bytes");
  return f;
}

inline PackedFile load_packed(const std::string& path) { return deserialize_packed(ByteReader::from_file(path)); }

}  // namespace lcl
