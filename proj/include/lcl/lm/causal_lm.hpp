#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "lcl/data/batch.hpp"
#include "lcl/nn/transformer.hpp"

namespace lcl {

struct LMConfig {
  std::size_t vocab_size = 64;
  std::size_t hidden_dim = 64;
  std::size_t depth = 4;
  std::size_t num_heads = 4;
  std::size_t mlp_ratio = 4;
  std::size_t max_seq_len = 2048;
  std::size_t visual_dim = 64;  // width of incoming image latents
  double drop_path_max = 0.0;
  double layer_scale_init = 1e-5;
  SpecialTokens specials;

  void validate() const {
    specials.validate(vocab_size);
    if (num_heads == 0 || hidden_dim % num_heads != 0) {
      throw std::invalid_argument("LMConfig: hidden_dim must be divisible by num_heads");
    }
    if (max_seq_len < 2) throw std::invalid_argument("LMConfig: max_seq_len must be at least 2");
    if (visual_dim == 0) throw std::invalid_argument("LMConfig: visual_dim must be positive");
    if (!(drop_path_max >= 0.0 && drop_path_max <= nn::kMaxDropPath)) {
      throw std::invalid_argument("LMConfig: drop_path_max must lie in [0, 0.2]");
    }
  }
};

template <typename T>
struct LMOutput {
  Tensor<T> y;            // (rows, width, d)
  Tensor<T> text_logits;  // (rows, width, vocab)
  Tensor<T> t;            // (num_images, d) context embeddings, undefined without images
};

/// Decoder-only transformer over interleaved latents. Text positions use
/// the token table, patch positions use projected image latents, and learned
/// absolute positions are added everywhere.
template <typename T>
class CausalLM {
 public:
  CausalLM() = default;
  CausalLM(nn::ParameterSet<T>& ps, const std::string& name, const LMConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    tok_embed_ = ps.normal(name + ".tok_embed", {cfg.vocab_size, cfg.hidden_dim}, nn::kInitStd);
    pos_embed_ = ps.normal(name + ".pos_embed", {cfg.max_seq_len, cfg.hidden_dim}, nn::kInitStd, false);
    if (cfg.visual_dim != cfg.hidden_dim) {
      visual_proj_.emplace(ps, name + ".visual_proj", cfg.visual_dim, cfg.hidden_dim);
    }
    nn::BlockConfig bc{cfg.hidden_dim, cfg.num_heads, cfg.mlp_ratio, 0.0, cfg.layer_scale_init};
    blocks_ = nn::make_blocks(ps, name + ".blocks", cfg.depth, bc, cfg.drop_path_max);
    head_ = nn::Linear<T>(ps, name + ".head", cfg.hidden_dim, cfg.vocab_size, false);
    ctx_norm_ = nn::LayerNorm<T>(ps, name + ".ctx_norm", cfg.hidden_dim);
    ctx_proj_ = nn::Linear<T>(ps, name + ".ctx_proj", cfg.hidden_dim, cfg.hidden_dim);
  }

  /// (rows, width, d) input embeddings. `patch_latents` is (num_images, P,
  /// visual_dim) in batch image order; it may be undefined when the batch
  /// holds no images.
  Tensor<T> assemble_embeddings(const BatchedSequence& b, const Tensor<T>& patch_latents) const {
    const std::size_t n_img = b.num_images();
    const std::size_t P = b.patches_per_image;
    if (b.width > cfg_.max_seq_len) {
      throw std::length_error("assemble_embeddings: width " + std::to_string(b.width) + " exceeds max_seq_len " +
                              std::to_string(cfg_.max_seq_len));
    }
    if (n_img > 0) {
      if (!patch_latents.defined() || patch_latents.shape() != Shape{n_img, P, cfg_.visual_dim}) {
        throw ShapeError("assemble_embeddings: batch has " + std::to_string(n_img) + " image slots of " +
                         std::to_string(P) + " patches but latents are " +
                         (patch_latents.defined() ? shape_str(patch_latents.shape()) : std::string("missing")));
      }
    } else if (patch_latents.defined() && patch_latents.shape()[0] != 0) {
      throw ShapeError("assemble_embeddings: latents given for a batch without image slots");
    }
    const std::size_t V = cfg_.vocab_size;
    std::vector<std::size_t> rows(b.rows * b.width);
    for (std::size_t k = 0; k < rows.size(); ++k) {
      if (b.kinds[k] == SlotKind::Patch) {
        rows[k] = V + static_cast<std::size_t>(b.patch_of[k]);
        continue;
      }
      const auto id = b.tokens[k];
      if (id < 0 || static_cast<std::size_t>(id) >= V) {
        throw std::out_of_range("assemble_embeddings: token id " + std::to_string(id) + " outside vocabulary of " +
                                std::to_string(V));
      }
      rows[k] = static_cast<std::size_t>(id);
    }
    Tensor<T> table = tok_embed_;
    if (n_img > 0) {
      Tensor<T> z = reshape(patch_latents, {n_img * P, cfg_.visual_dim});
      if (visual_proj_) z = (*visual_proj_)(z);
      table = concat<T>({tok_embed_, z}, 0);
    }
    const Tensor<T> x = reshape(gather_rows(table, rows), {b.rows, b.width, cfg_.hidden_dim});
    return add(x, slice(pos_embed_, 0, 0, b.width));
  }

  /// Causal stack; key positions marked in `pad_mask` (rows, width) are hidden.
  Tensor<T> forward_causal(const Tensor<T>& x, const Mask& pad_mask, const nn::ForwardContext& ctx) const {
    const std::size_t rows = x.shape()[0], width = x.shape()[1];
    if (pad_mask.shape() != Shape{rows, width}) {
      throw ShapeError("forward_causal: pad mask " + shape_str(pad_mask.shape()) + " does not match " + shape_str(x.shape()));
    }
    const Mask mask = nn::causal_mask(rows, width, &pad_mask);
    Tensor<T> h = x;
    for (const auto& blk : blocks_) h = blk(h, &mask, ctx);
    return h;
  }

  Tensor<T> logits(const Tensor<T>& y) const { return head_(y); }

  /// ctx_head: LayerNorm then linear projection.
  Tensor<T> context_head(const Tensor<T>& rows) const { return ctx_proj_(ctx_norm_(rows)); }

  /// Logits at every position and t_i from the output at each image's <BoI>.
  LMOutput<T> extract_heads(const Tensor<T>& y, const BatchedSequence& b) const {
    LMOutput<T> out;
    out.y = y;
    out.text_logits = logits(y);
    if (b.num_images() > 0) out.t = context_head(gather_rows(reshape(y, {b.rows * b.width, cfg_.hidden_dim}), boi_rows(b)));
    return out;
  }

  LMOutput<T> forward(const BatchedSequence& b, const Tensor<T>& patch_latents, const nn::ForwardContext& ctx) const {
    return extract_heads(forward_causal(assemble_embeddings(b, patch_latents), b.pad_mask, ctx), b);
  }

  /// Flat (row * width + column) indices of every image's <BoI>.
  std::vector<std::size_t> boi_rows(const BatchedSequence& b) const {
    std::vector<std::size_t> idx;
    idx.reserve(b.num_images());
    for (std::size_t i = 0; i < b.num_images(); ++i) {
      const auto& im = b.images[i];
      if (im.boi >= b.width || b.tokens[b.index(im.row, im.boi)] != cfg_.specials.boi) {
        throw std::invalid_argument("extract_heads: image " + std::to_string(i) + " has no <BoI> record at row " +
                                    std::to_string(im.row) + " column " + std::to_string(im.boi));
      }
      idx.push_back(b.index(im.row, im.boi));
    }
    return idx;
  }

  const LMConfig& config() const { return cfg_; }
  const Tensor<T>& token_embedding() const { return tok_embed_; }
  const Tensor<T>& position_embedding() const { return pos_embed_; }
  const nn::Linear<T>& head() const { return head_; }
  const std::vector<nn::TransformerBlock<T>>& blocks() const { return blocks_; }

 private:
  LMConfig cfg_;
  Tensor<T> tok_embed_, pos_embed_;
  std::optional<nn::Linear<T>> visual_proj_;
  std::vector<nn::TransformerBlock<T>> blocks_;
  nn::Linear<T> head_;
  nn::LayerNorm<T> ctx_norm_;
  nn::Linear<T> ctx_proj_;
};

}  // namespace lcl
