#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "lcl/data/corpus.hpp"

namespace lcl {

enum class SlotKind : std::uint8_t { Text = 0, Patch = 1, Pad = 2 };

/// One position of an interleaved sequence. Text slots carry a vocabulary id
/// (specials included); patch slots carry (image, patch) indices.
struct Slot {
  SlotKind kind = SlotKind::Pad;
  std::int32_t token = 0;   // Text: vocab id. Patch: patch index within its image.
  std::int32_t image = -1;  // Patch: index into InterleavedSequence::images.

  friend bool operator==(const Slot&, const Slot&) = default;
};

/// An image placed in a sequence together with its ground-truth pairing.
struct ImageRef {
  ImagePtr pixels;
  std::uint64_t image_id = 0;
  std::int64_t caption_id = -1;  // -1 when the image has no paired caption
  std::vector<std::int32_t> caption;
  ImageAttributes attrs;
  std::uint64_t doc_id = 0;
  std::size_t boi_pos = 0;  // position of its <BoI> in the sequence
};

/// x = (</s>, x_1, ..., x_N) with images expanded to <BoI>, patches, <EoI>.
/// `slots` holds the non-pad prefix; positions up to `padded_length` beyond it
/// are padding.
struct InterleavedSequence {
  std::vector<Slot> slots;
  std::vector<ImageRef> images;
  std::size_t padded_length = 0;

  /// N: positions after the leading </s>.
  std::size_t length() const { return slots.empty() ? 0 : slots.size() - 1; }
  std::size_t size() const { return std::max(padded_length, slots.size()); }

  void append_text(std::int32_t token) { slots.push_back({SlotKind::Text, token, -1}); }

  void append_tokens(const std::vector<std::int32_t>& tokens) {
    for (auto t : tokens) append_text(t);
  }

  void append_image(ImageRef ref, std::size_t patches, const SpecialTokens& sp) {
    ref.boi_pos = slots.size();
    const auto idx = static_cast<std::int32_t>(images.size());
    images.push_back(std::move(ref));
    append_text(sp.boi);
    for (std::size_t p = 0; p < patches; ++p) slots.push_back({SlotKind::Patch, static_cast<std::int32_t>(p), idx});
    append_text(sp.eoi);
  }

  void pad_to(std::size_t len) {
    if (len < slots.size()) {
      throw std::length_error("pad_to: sequence of " + std::to_string(slots.size()) + " exceeds " + std::to_string(len));
    }
    padded_length = len;
  }

  Slot slot(std::size_t pos) const { return pos < slots.size() ? slots[pos] : Slot{}; }

  /// I: image-patch positions.
  std::vector<std::size_t> image_positions() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 1; i < slots.size(); ++i)
      if (slots[i].kind == SlotKind::Patch) out.push_back(i);
    return out;
  }

  /// T: text positions among 1..N, specials included.
  std::vector<std::size_t> text_positions() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 1; i < slots.size(); ++i)
      if (slots[i].kind == SlotKind::Text) out.push_back(i);
    return out;
  }

  std::vector<std::size_t> boi_positions() const {
    std::vector<std::size_t> out;
    for (const auto& r : images) out.push_back(r.boi_pos);
    return out;
  }

  /// Throws std::logic_error unless every image occupies <BoI>, `patches`
  /// contiguous patch slots numbered 0..patches-1, then <EoI>, and the header
  /// is </s>.
  void validate(std::size_t patches, const SpecialTokens& sp) const {
    auto bad = [](const std::string& m) { throw std::logic_error("interleaved sequence: " + m); };
    if (slots.empty() || slots[0].kind != SlotKind::Text || slots[0].token != sp.eos) bad("missing leading </s>");
    std::size_t next_image = 0;
    for (std::size_t i = 0; i < slots.size();) {
      const Slot& s = slots[i];
      if (s.kind == SlotKind::Pad) bad("pad slot inside content at " + std::to_string(i));
      if (s.kind == SlotKind::Patch) bad("patch slot outside an image span at " + std::to_string(i));
      if (s.token == sp.eoi) bad("<EoI> without <BoI> at " + std::to_string(i));
      if (s.token != sp.boi) {
        ++i;
        continue;
      }
      if (next_image >= images.size() || images[next_image].boi_pos != i) bad("<BoI> at " + std::to_string(i) + " has no image record");
      if (i + patches + 1 >= slots.size()) bad("image span at " + std::to_string(i) + " is cut off");
      for (std::size_t p = 0; p < patches; ++p) {
        const Slot& q = slots[i + 1 + p];
        if (q.kind != SlotKind::Patch || q.token != static_cast<std::int32_t>(p) ||
            q.image != static_cast<std::int32_t>(next_image)) {
          bad("image span at " + std::to_string(i) + " broken at patch " + std::to_string(p));
        }
      }
      const Slot& end = slots[i + patches + 1];
      if (end.kind != SlotKind::Text || end.token != sp.eoi) bad("image span at " + std::to_string(i) + " lacks <EoI>");
      ++next_image;
      i += patches + 2;
    }
    if (next_image != images.size()) bad("image records without spans");
    if (padded_length != 0 && padded_length < slots.size()) bad("content longer than padded length");
  }
};

}  // namespace lcl
