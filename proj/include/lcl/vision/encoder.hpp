#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "lcl/nn/transformer.hpp"

namespace lcl {

struct VisionConfig {
  std::size_t image_size = 32;
  std::size_t patch_size = 8;
  std::size_t channels = 3;
  std::size_t hidden_dim = 64;
  std::size_t depth = 4;
  std::size_t num_heads = 4;
  std::size_t mlp_ratio = 4;
  double drop_path_max = 0.2;
  double layer_scale_init = 1e-5;

  std::size_t grid() const { return image_size / patch_size; }
  /// Number of patch tokens per image (M + 1).
  std::size_t num_patches() const { return grid() * grid(); }
  std::size_t patch_dim() const { return channels * patch_size * patch_size; }

  void validate() const {
    if (patch_size == 0 || image_size == 0 || image_size % patch_size != 0) {
      throw std::invalid_argument("VisionConfig: image_size " + std::to_string(image_size) +
                                  " must be a positive multiple of patch_size " + std::to_string(patch_size));
    }
    if (channels == 0) throw std::invalid_argument("VisionConfig: channels must be positive");
    if (num_heads == 0 || hidden_dim % num_heads != 0) {
      throw std::invalid_argument("VisionConfig: hidden_dim must be divisible by num_heads");
    }
    if (!(drop_path_max >= 0.0 && drop_path_max <= nn::kMaxDropPath)) {
      throw std::invalid_argument("VisionConfig: drop_path_max must lie in [0, 0.2]");
    }
  }
};

/// Splits a (C, H, W) image into non-overlapping patches, one row per patch
/// in row-major patch order; each row is the patch flattened channel-major
/// (channel, then row, then column).
template <typename T>
NDArray<T> patchify(const NDArray<T>& image, std::size_t patch) {
  if (image.rank() != 3) throw ShapeError("patchify: expected (C, H, W), got " + shape_str(image.shape()));
  const std::size_t c = image.shape()[0], h = image.shape()[1], w = image.shape()[2];
  if (patch == 0 || h % patch != 0 || w % patch != 0) {
    throw ShapeError("patchify: image " + shape_str(image.shape()) + " not divisible into " + std::to_string(patch) +
                     "-pixel patches");
  }
  const std::size_t gh = h / patch, gw = w / patch, pd = c * patch * patch;
  NDArray<T> out({gh * gw, pd});
  for (std::size_t py = 0; py < gh; ++py)
    for (std::size_t px = 0; px < gw; ++px) {
      T* row = out.ptr() + (py * gw + px) * pd;
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < patch; ++y)
          for (std::size_t x = 0; x < patch; ++x)
            *row++ = image.at(ch, py * patch + y, px * patch + x);
    }
  return out;
}

/// Inverse of patchify for a square grid.
template <typename T>
NDArray<T> unpatchify(const NDArray<T>& patches, std::size_t channels, std::size_t patch) {
  const std::size_t n = patches.shape()[0];
  std::size_t g = 0;
  while (g * g < n) ++g;
  if (g * g != n || patches.shape()[1] != channels * patch * patch) {
    throw ShapeError("unpatchify: " + shape_str(patches.shape()) + " is not a square patch grid");
  }
  NDArray<T> image({channels, g * patch, g * patch});
  for (std::size_t py = 0; py < g; ++py)
    for (std::size_t px = 0; px < g; ++px) {
      const T* row = patches.ptr() + (py * g + px) * patches.shape()[1];
      for (std::size_t ch = 0; ch < channels; ++ch)
        for (std::size_t y = 0; y < patch; ++y)
          for (std::size_t x = 0; x < patch; ++x) image.at(ch, py * patch + y, px * patch + x) = *row++;
    }
  return image;
}

template <typename T>
struct ImageLatent {
  Tensor<T> z;  // (B, M+1, d) patch latents
  Tensor<T> v;  // (B, d) pooled global representation
};

inline constexpr double kPatchPositionStd = 1.0;

/// ViT-style encoder: linear patch embedding plus learned positional
/// embedding, bidirectional transformer blocks, then attention pooling.
template <typename T>
class VisionEncoder {
 public:
  VisionEncoder() = default;
  VisionEncoder(nn::ParameterSet<T>& ps, const std::string& name, const VisionConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    embed_ = nn::Linear<T>(ps, name + ".patch_embed", cfg.patch_dim(), cfg.hidden_dim);
    pos_ = ps.normal(name + ".pos_embed", {cfg.num_patches(), cfg.hidden_dim}, kPatchPositionStd, false);
    nn::BlockConfig bc{cfg.hidden_dim, cfg.num_heads, cfg.mlp_ratio, 0.0, cfg.layer_scale_init};
    blocks_ = nn::make_blocks(ps, name + ".blocks", cfg.depth, bc, cfg.drop_path_max);
    pool_ = nn::AttentionPool<T>(ps, name + ".pool", cfg.hidden_dim, cfg.num_heads);
  }

  /// Maps raw pixels in [0, 1] to [-1, 1] and patchifies a (B, C, H, W) batch
  /// into (B, M+1, C*p*p).
  NDArray<T> prepare(const NDArray<T>& images) const {
    if (images.rank() != 4 || images.shape()[1] != cfg_.channels || images.shape()[2] != cfg_.image_size ||
        images.shape()[3] != cfg_.image_size) {
      throw ShapeError("encode_image: expected (B, " + std::to_string(cfg_.channels) + ", " +
                       std::to_string(cfg_.image_size) + ", " + std::to_string(cfg_.image_size) + "), got " +
                       shape_str(images.shape()));
    }
    const std::size_t b = images.shape()[0];
    const std::size_t per_image = images.numel() / std::max<std::size_t>(b, 1);
    NDArray<T> out({b, cfg_.num_patches(), cfg_.patch_dim()});
    for (std::size_t i = 0; i < b; ++i) {
      NDArray<T> img({cfg_.channels, cfg_.image_size, cfg_.image_size},
                     std::vector<T>(images.ptr() + i * per_image, images.ptr() + (i + 1) * per_image));
      for (auto& x : img.data()) x = x * T(2) - T(1);
      const NDArray<T> p = patchify(img, cfg_.patch_size);
      std::copy(p.ptr(), p.ptr() + p.numel(), out.ptr() + i * p.numel());
    }
    return out;
  }

  /// Patch latents only, (B, M+1, d).
  Tensor<T> latents(const NDArray<T>& images, const nn::ForwardContext& ctx) const {
    Tensor<T> h = add(embed_(Tensor<T>::constant(prepare(images))), pos_);
    for (const auto& block : blocks_) h = block(h, nullptr, ctx);
    return h;
  }

  ImageLatent<T> encode(const NDArray<T>& images, const nn::ForwardContext& ctx) const {
    Tensor<T> z = latents(images, ctx);
    Tensor<T> v = pool_(z);
    return {z, v};
  }

  /// Single (C, H, W) image; returns z as (M+1, d) and v as (d).
  ImageLatent<T> encode_image(const NDArray<T>& image, const nn::ForwardContext& ctx) const {
    Shape s = image.shape();
    s.insert(s.begin(), 1);
    ImageLatent<T> out = encode(image.reshaped(s), ctx);
    return {reshape(out.z, {cfg_.num_patches(), cfg_.hidden_dim}), reshape(out.v, {cfg_.hidden_dim})};
  }

  const VisionConfig& config() const { return cfg_; }
  const nn::AttentionPool<T>& pool() const { return pool_; }

 private:
  VisionConfig cfg_;
  nn::Linear<T> embed_;
  Tensor<T> pos_;
  std::vector<nn::TransformerBlock<T>> blocks_;
  nn::AttentionPool<T> pool_;
};

}  // namespace lcl
