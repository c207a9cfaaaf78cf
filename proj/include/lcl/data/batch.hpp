#pragma once

#include <algorithm>
#include <stdexcept>
#include <string>
#include <vector>

#include "lcl/data/sequence.hpp"

namespace lcl {

struct CollateOptions {
  std::size_t max_seq_len = 2048;
  std::size_t patches_per_image = 16;
  bool gen_specials = true;  // <BoI>, <EoI> and terminal </s> count as generation targets
  SpecialTokens specials;
};

/// An image of the batch and where it sits.
struct BatchImage {
  std::size_t row = 0;
  std::size_t boi = 0;  // column of its <BoI>
  ImageRef ref;
};

/// Sequences stacked row-wise and padded to the longest content length.
struct BatchedSequence {
  std::size_t rows = 0;
  std::size_t width = 0;
  std::size_t patches_per_image = 0;
  std::vector<std::int32_t> tokens;   // (rows, width); pad id at pad and patch positions
  std::vector<SlotKind> kinds;        // (rows, width)
  std::vector<std::int32_t> patch_of;  // (rows, width) flat index image * P + patch, or -1
  Mask pad_mask;                      // (rows, width), 1 = pad
  std::vector<std::uint8_t> targets;  // (rows, width), 1 = token predicted from the previous position
  std::vector<BatchImage> images;     // row-major, in sequence order
  std::vector<std::size_t> images_per_row;
  std::vector<std::size_t> lengths;  // content length per row, header included

  std::size_t index(std::size_t r, std::size_t c) const { return r * width + c; }
  std::size_t num_images() const { return images.size(); }

  std::size_t target_count() const {
    return static_cast<std::size_t>(std::count(targets.begin(), targets.end(), std::uint8_t{1}));
  }

  /// Stacked pixels (num_images, C, H, W).
  NDArray<float> pixels() const {
    if (images.empty()) return NDArray<float>(Shape{0});
    Shape s = images[0].ref.pixels->shape();
    const std::size_t per = images[0].ref.pixels->numel();
    s.insert(s.begin(), images.size());
    NDArray<float> out(s);
    for (std::size_t i = 0; i < images.size(); ++i) {
      const auto& px = *images[i].ref.pixels;
      if (px.numel() != per) throw ShapeError("batch images have differing sizes");
      std::copy(px.ptr(), px.ptr() + per, out.ptr() + i * per);
    }
    return out;
  }
};

inline BatchedSequence collate_batch(const std::vector<InterleavedSequence>& seqs, const CollateOptions& opt) {
  const SpecialTokens& sp = opt.specials;
  if (seqs.empty()) throw std::invalid_argument("collate_batch: empty batch");
  BatchedSequence b;
  b.rows = seqs.size();
  b.patches_per_image = opt.patches_per_image;
  for (std::size_t r = 0; r < seqs.size(); ++r) {
    const auto& s = seqs[r];
    if (s.slots.size() > opt.max_seq_len || s.size() > opt.max_seq_len) {
      throw std::length_error("collate_batch: sequence " + std::to_string(r) + " has " + std::to_string(s.size()) +
                              " positions, over max_seq_len " + std::to_string(opt.max_seq_len));
    }
    s.validate(opt.patches_per_image, sp);
    b.width = std::max(b.width, s.slots.size());
  }
  const std::size_t n = b.rows * b.width;
  b.tokens.assign(n, sp.pad);
  b.kinds.assign(n, SlotKind::Pad);
  b.patch_of.assign(n, -1);
  b.targets.assign(n, 0);
  b.pad_mask = Mask({b.rows, b.width}, 1);
  for (std::size_t r = 0; r < seqs.size(); ++r) {
    const auto& s = seqs[r];
    const std::size_t first_image = b.images.size();
    for (const auto& ref : s.images) b.images.push_back({r, ref.boi_pos, ref});
    b.images_per_row.push_back(s.images.size());
    b.lengths.push_back(s.slots.size());
    for (std::size_t c = 0; c < s.slots.size(); ++c) {
      const Slot& slot = s.slots[c];
      const std::size_t k = b.index(r, c);
      b.kinds[k] = slot.kind;
      b.pad_mask[k] = 0;
      if (slot.kind == SlotKind::Patch) {
        b.patch_of[k] = static_cast<std::int32_t>((first_image + static_cast<std::size_t>(slot.image)) * opt.patches_per_image +
                                                  static_cast<std::size_t>(slot.token));
        continue;
      }
      b.tokens[k] = slot.token;
      if (c == 0) continue;
      const bool special = slot.token == sp.boi || slot.token == sp.eoi || slot.token == sp.eos;
      if (slot.token != sp.pad && (opt.gen_specials || !special)) b.targets[k] = 1;
    }
  }
  return b;
}

}  // namespace lcl
