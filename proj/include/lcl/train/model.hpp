#pragma once

#include <string>
#include <utility>

#include "lcl/objective/losses.hpp"
#include "lcl/train/config.hpp"

namespace lcl {

template <typename T>
struct StepOutput {
  Tensor<T> total;
  Tensor<T> generation;
  ContrastiveResult<T> contrastive;  // loss undefined when the batch holds fewer than 2 images
  Tensor<T> v;                      // (n_img, d_v)
  Tensor<T> t;                      // (n_img, d_lm)
  Tensor<T> image_embed;            // W1 v
  Tensor<T> context_embed;          // W2 t
  std::size_t text_targets = 0;
};

/// Vision encoder, causal LM and contrastive head over one parameter set.
template <typename T>
class LCLModel {
 public:
  explicit LCLModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg), ps_(seed) {
    cfg.validate();
    vision_ = VisionEncoder<T>(ps_, "vision", cfg.vision);
    lm_ = CausalLM<T>(ps_, "lm", cfg.lm);
    head_ = ContrastiveHead<T>(ps_, "contrastive", cfg.vision.hidden_dim, cfg.lm.hidden_dim, cfg.embed_dim,
                               cfg.normalize_embeddings);
  }

  LCLModel(const LCLModel&) = delete;
  LCLModel& operator=(const LCLModel&) = delete;

  struct Options {
    double lambda = 0.1;
    bool exclude_same_doc_negatives = false;
  };

  /// Full forward pass and losses for one batch.
  StepOutput<T> step(const BatchedSequence& b, const nn::ForwardContext& ctx, const Options& opt) const {
    if (b.patches_per_image != cfg_.patches_per_image()) {
      throw ShapeError("LCLModel: batch has " + std::to_string(b.patches_per_image) + " patches per image, encoder makes " +
                       std::to_string(cfg_.patches_per_image()));
    }
    StepOutput<T> out;
    Tensor<T> z;
    if (b.num_images() > 0) {
      const auto lat = vision_.encode(b.pixels().template cast<T>(), ctx);
      z = lat.z;
      out.v = lat.v;
    }
    const auto lm_out = lm_.forward(b, z, ctx);
    out.t = lm_out.t;
    out.generation = generation_loss(lm_out.text_logits, b);
    out.text_targets = b.target_count();
    if (b.num_images() >= 2) {
      const Mask excl = opt.exclude_same_doc_negatives ? same_document_mask(b) : Mask();
      out.contrastive = contrastive_loss(out.v, out.t, head_, opt.exclude_same_doc_negatives ? &excl : nullptr);
      out.image_embed = head_.project_image(out.v);
      out.context_embed = head_.project_context(out.t);
    }
    out.total = total_loss(out.contrastive.loss, out.generation, opt.lambda);
    return out;
  }

  /// Pooled image representations v and context embeddings t, no losses.
  std::pair<Tensor<T>, Tensor<T>> representations(const BatchedSequence& b, const nn::ForwardContext& ctx) const {
    if (b.num_images() == 0) throw std::invalid_argument("representations: batch holds no images");
    const auto lat = vision_.encode(b.pixels().template cast<T>(), ctx);
    const auto y = lm_.forward_causal(lm_.assemble_embeddings(b, lat.z), b.pad_mask, ctx);
    const Tensor<T> t =
        lm_.context_head(gather_rows(reshape(y, {b.rows * b.width, cfg_.lm.hidden_dim}), lm_.boi_rows(b)));
    return {lat.v, t};
  }

  const ModelConfig& config() const { return cfg_; }
  nn::ParameterSet<T>& parameters() { return ps_; }
  const nn::ParameterSet<T>& parameters() const { return ps_; }
  const VisionEncoder<T>& vision() const { return vision_; }
  const CausalLM<T>& lm() const { return lm_; }
  const ContrastiveHead<T>& head() const { return head_; }
  ContrastiveHead<T>& head() { return head_; }

 private:
  ModelConfig cfg_;
  nn::ParameterSet<T> ps_;
  VisionEncoder<T> vision_;
  CausalLM<T> lm_;
  ContrastiveHead<T> head_;
};

}  // namespace lcl
