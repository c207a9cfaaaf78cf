#include <gtest/gtest.h>

#include <cmath>

#include "lcl/lm/causal_lm.hpp"

using namespace lcl;

namespace {

constexpr std::size_t kP = 4;

LMConfig small_cfg(std::size_t depth = 2, std::size_t visual_dim = 8) {
  LMConfig c;
  c.vocab_size = 16;
  c.hidden_dim = 8;
  c.depth = depth;
  c.num_heads = 2;
  c.mlp_ratio = 2;
  c.max_seq_len = 64;
  c.visual_dim = visual_dim;
  c.layer_scale_init = 0.5;
  return c;
}

ImageRef dummy_image() {
  ImageRef r;
  r.pixels = std::make_shared<const Image>(Shape{3, 2, 2});
  return r;
}

// </s> 5 6 [img] 7 [img] 8
InterleavedSequence two_image_sequence() {
  InterleavedSequence s;
  s.append_text(1);
  s.append_text(5);
  s.append_text(6);
  s.append_image(dummy_image(), kP, {});
  s.append_text(7);
  s.append_image(dummy_image(), kP, {});
  s.append_text(8);
  return s;
}

BatchedSequence batch_of(const std::vector<InterleavedSequence>& seqs) { return collate_batch(seqs, {64, kP, true, {}}); }

Tensor<double> random_latents(std::size_t n, std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  NDArray<double> a({n, kP, d});
  for (auto& x : a.data()) x = rng.normal();
  return Tensor<double>::constant(a);
}

}  // namespace

TEST(LMConfig, Validation) {
  EXPECT_NO_THROW(small_cfg().validate());
  auto c = small_cfg();
  c.vocab_size = 3;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = small_cfg();
  c.drop_path_max = 0.5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(CausalLM, TextOnlyEmbeddingIsLookupPlusPosition) {
  nn::ParameterSet<double> ps(1);
  CausalLM<double> lm(ps, "lm", small_cfg());
  InterleavedSequence s;
  for (int t : {1, 4, 9, 9, 15}) s.append_text(t);
  const auto b = batch_of({s});
  const auto x = lm.assemble_embeddings(b, {});
  ASSERT_EQ(x.shape(), (Shape{1, 5, 8}));
  const auto& tok = lm.token_embedding().value();
  const auto& pos = lm.position_embedding().value();
  for (std::size_t p = 0; p < 5; ++p)
    for (std::size_t j = 0; j < 8; ++j)
      EXPECT_EQ(x.value().at(0, p, j), tok.at(static_cast<std::size_t>(s.slots[p].token), j) + pos.at(p, j));
}

TEST(CausalLM, ImagePatchesFillConsecutiveRows) {
  nn::ParameterSet<double> ps(2);
  CausalLM<double> lm(ps, "lm", small_cfg(2, 8));
  InterleavedSequence s;
  s.append_text(1);
  s.append_image(dummy_image(), kP, {});
  const auto b = batch_of({s});
  const auto z = random_latents(1, 8, 3);
  const auto x = lm.assemble_embeddings(b, z);
  const auto& pos = lm.position_embedding().value();
  for (std::size_t p = 0; p < kP; ++p)
    for (std::size_t j = 0; j < 8; ++j) EXPECT_EQ(x.value().at(0, 2 + p, j), z.value().at(0, p, j) + pos.at(2 + p, j));
}

TEST(CausalLM, VisualProjectionWhenWidthsDiffer) {
  nn::ParameterSet<double> ps(3);
  CausalLM<double> lm(ps, "lm", small_cfg(1, 6));
  ASSERT_TRUE(ps.contains("lm.visual_proj.weight"));
  InterleavedSequence s;
  s.append_text(1);
  s.append_image(dummy_image(), kP, {});
  const auto z = random_latents(1, 6, 4);
  const auto x = lm.assemble_embeddings(batch_of({s}), z);
  const auto& w = ps.get("lm.visual_proj.weight").value();
  const auto& bias = ps.get("lm.visual_proj.bias").value();
  const auto& pos = lm.position_embedding().value();
  for (std::size_t p = 0; p < kP; ++p)
    for (std::size_t j = 0; j < 8; ++j) {
      double acc = bias[j] + pos.at(2 + p, j);
      for (std::size_t k = 0; k < 6; ++k) acc += z.value().at(0, p, k) * w.at(k, j);
      EXPECT_NEAR(x.value().at(0, 2 + p, j), acc, 1e-14);
    }
}

TEST(CausalLM, MixedSequenceShapeIncludesHeader) {
  nn::ParameterSet<double> ps(4);
  CausalLM<double> lm(ps, "lm", small_cfg());
  InterleavedSequence s;
  s.append_text(1);
  s.append_text(5);
  s.append_image(dummy_image(), kP, {});  // 6 positions
  for (int i = 0; i < 5; ++i) s.append_text(6);
  ASSERT_EQ(s.length(), 12u);
  const auto out = lm.forward(batch_of({s}), random_latents(1, 8, 5), {});
  EXPECT_EQ(out.y.shape(), (Shape{1, 13, 8}));
  EXPECT_EQ(out.text_logits.shape(), (Shape{1, 13, 16}));
}

TEST(CausalLM, PerturbationNeverReachesEarlierPositions) {
  nn::ParameterSet<double> ps(5);
  CausalLM<double> lm(ps, "lm", small_cfg(3));
  Rng rng(6);
  NDArray<double> x({2, 10, 8});
  for (auto& v : x.data()) v = rng.normal();
  Mask pad({2, 10}, 0);
  const auto y0 = lm.forward_causal(Tensor<double>::constant(x), pad, {}).value();
  for (std::size_t j = 0; j < 10; ++j) {
    NDArray<double> xp = x;
    for (std::size_t k = 0; k < 8; ++k) xp.at(1, j, k) += 1.0 + 0.3 * static_cast<double>(k);
    const auto y1 = lm.forward_causal(Tensor<double>::constant(xp), pad, {}).value();
    for (std::size_t p = 0; p < j; ++p)
      for (std::size_t k = 0; k < 8; ++k) ASSERT_EQ(y1.at(1, p, k), y0.at(1, p, k));
    EXPECT_NE(y1.at(1, 9, 0), y0.at(1, 9, 0));
    for (std::size_t p = 0; p < 10; ++p)
      for (std::size_t k = 0; k < 8; ++k) ASSERT_EQ(y1.at(0, p, k), y0.at(0, p, k));
  }
}

TEST(CausalLM, PaddingIsInvisibleToRealPositions) {
  nn::ParameterSet<double> ps(7);
  CausalLM<double> lm(ps, "lm", small_cfg(2));
  InterleavedSequence a, b;
  for (int t : {1, 5, 6}) a.append_text(t);
  for (int t : {1, 5, 6, 7, 8, 9}) b.append_text(t);
  const auto alone = lm.forward(batch_of({a}), {}, {}).y.value();
  const auto both = lm.forward(batch_of({a, b}), {}, {}).y.value();
  for (std::size_t p = 0; p < 3; ++p)
    for (std::size_t k = 0; k < 8; ++k) EXPECT_NEAR(both.at(0, p, k), alone.at(0, p, k), 1e-14);
}

TEST(CausalLM, DepthZeroReturnsEmbeddings) {
  nn::ParameterSet<double> ps(8);
  CausalLM<double> lm(ps, "lm", small_cfg(0));
  const auto b = batch_of({two_image_sequence()});
  const auto x = lm.assemble_embeddings(b, random_latents(2, 8, 9));
  EXPECT_EQ(lm.forward_causal(x, b.pad_mask, {}).value(), x.value());
}

TEST(CausalLM, EvalForwardIsBitwiseRepeatable) {
  auto cfg = small_cfg(2);
  cfg.drop_path_max = 0.2;
  nn::ParameterSet<float> ps(10);
  CausalLM<float> lm(ps, "lm", cfg);
  const auto b = batch_of({two_image_sequence(), two_image_sequence()});
  NDArray<float> z({4, kP, 8}, 0.25f);
  const auto o1 = lm.forward(b, Tensor<float>::constant(z), {});
  const auto o2 = lm.forward(b, Tensor<float>::constant(z), {});
  EXPECT_EQ(o1.y.value(), o2.y.value());
  EXPECT_EQ(o1.t.value(), o2.t.value());
}

TEST(CausalLM, OneContextVectorPerImageInOrder) {
  nn::ParameterSet<double> ps(11);
  CausalLM<double> lm(ps, "lm", small_cfg());
  const auto b = batch_of({two_image_sequence()});
  const auto out = lm.forward(b, random_latents(2, 8, 12), {});
  ASSERT_EQ(out.t.shape(), (Shape{2, 8}));
  // Each row equals the context head applied to y at that image's <BoI>.
  for (std::size_t i = 0; i < 2; ++i) {
    const auto yi = slice(slice(out.y, 1, b.images[i].boi, b.images[i].boi + 1), 0, 0, 1);
    const auto ti = lm.context_head(reshape(yi, {1, 8})).value();
    for (std::size_t k = 0; k < 8; ++k) EXPECT_EQ(out.t.value().at(i, k), ti[k]);
  }
  EXPECT_LT(b.images[0].boi, b.images[1].boi);
}

TEST(CausalLM, ContextHeadOnHandBuiltOutputs) {
  nn::ParameterSet<double> ps(13);
  CausalLM<double> lm(ps, "lm", small_cfg());
  const auto b = batch_of({two_image_sequence()});
  NDArray<double> y({1, b.width, 8});
  for (std::size_t p = 0; p < b.width; ++p)
    for (std::size_t k = 0; k < 8; ++k) y.at(0, p, k) = static_cast<double>(p) + 0.1 * static_cast<double>(k * k);
  const auto heads = lm.extract_heads(Tensor<double>::constant(y), b);
  const auto& g = ps.get("lm.ctx_norm.gain").value();
  const auto& gb = ps.get("lm.ctx_norm.bias").value();
  const auto& w = ps.get("lm.ctx_proj.weight").value();
  const auto& wb = ps.get("lm.ctx_proj.bias").value();
  for (std::size_t i = 0; i < 2; ++i) {
    const std::size_t p = b.images[i].boi;
    double mu = 0, var = 0;
    for (std::size_t k = 0; k < 8; ++k) mu += y.at(0, p, k) / 8;
    for (std::size_t k = 0; k < 8; ++k) var += (y.at(0, p, k) - mu) * (y.at(0, p, k) - mu) / 8;
    double normed[8];
    for (std::size_t k = 0; k < 8; ++k) normed[k] = (y.at(0, p, k) - mu) / std::sqrt(var + 1e-5) * g[k] + gb[k];
    for (std::size_t j = 0; j < 8; ++j) {
      double acc = wb[j];
      for (std::size_t k = 0; k < 8; ++k) acc += normed[k] * w.at(k, j);
      EXPECT_NEAR(heads.t.value().at(i, j), acc, 1e-12);
    }
  }
}

TEST(CausalLM, IdentityHeadReturnsOutputs) {
  auto cfg = small_cfg();
  cfg.vocab_size = cfg.hidden_dim;
  nn::ParameterSet<double> ps(14);
  CausalLM<double> lm(ps, "lm", cfg);
  auto head_w = ps.get("lm.head.weight");
  auto& w = head_w.mutable_value();
  w.fill(0);
  for (std::size_t i = 0; i < 8; ++i) w.at(i, i) = 1;
  InterleavedSequence s;
  for (int t : {1, 4, 5}) s.append_text(t);
  const auto out = lm.forward(batch_of({s}), {}, {});
  EXPECT_EQ(out.text_logits.value(), out.y.value());
}

TEST(CausalLM, ContextIgnoresOwnPatchesAndLaterTokens) {
  nn::ParameterSet<double> ps(15);
  CausalLM<double> lm(ps, "lm", small_cfg(3));
  const auto base_seq = two_image_sequence();
  const auto b = batch_of({base_seq});
  const auto z = random_latents(2, 8, 16);
  const auto t0 = lm.forward(b, z, {}).t.value();

  // Change the second image's patches and the trailing token.
  NDArray<double> z2 = z.value();
  for (std::size_t p = 0; p < kP; ++p)
    for (std::size_t k = 0; k < 8; ++k) z2.at(1, p, k) += 3.0 + static_cast<double>(k);
  auto seq2 = base_seq;
  seq2.slots.back().token = 12;
  const auto t1 = lm.forward(batch_of({seq2}), Tensor<double>::constant(z2), {}).t.value();
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t k = 0; k < 8; ++k) EXPECT_EQ(t1.at(i, k), t0.at(i, k));

  // Changing the first image's patches does move the second context.
  NDArray<double> z3 = z.value();
  for (std::size_t k = 0; k < 8; ++k) z3.at(0, 0, k) += static_cast<double>(k);
  const auto t2 = lm.forward(b, Tensor<double>::constant(z3), {}).t.value();
  for (std::size_t k = 0; k < 8; ++k) EXPECT_EQ(t2.at(0, k), t0.at(0, k));
  double moved = 0;
  for (std::size_t k = 0; k < 8; ++k) moved += std::abs(t2.at(1, k) - t0.at(1, k));
  EXPECT_GT(moved, 0.0);
}

TEST(CausalLM, Errors) {
  nn::ParameterSet<double> ps(17);
  CausalLM<double> lm(ps, "lm", small_cfg());
  const auto b = batch_of({two_image_sequence()});
  EXPECT_THROW(lm.assemble_embeddings(b, random_latents(1, 8, 1)), ShapeError);
  EXPECT_THROW(lm.assemble_embeddings(b, {}), ShapeError);
  auto bad = b;
  bad.tokens[1] = 99;
  EXPECT_THROW(lm.assemble_embeddings(bad, random_latents(2, 8, 1)), std::out_of_range);
  auto no_boi = b;
  no_boi.images[1].boi += 1;
  const auto y = lm.forward_causal(lm.assemble_embeddings(b, random_latents(2, 8, 1)), b.pad_mask, {});
  EXPECT_THROW(lm.extract_heads(y, no_boi), std::invalid_argument);
}

TEST(CausalLM, LogitRowsNormalize) {
  nn::ParameterSet<double> ps(18);
  CausalLM<double> lm(ps, "lm", small_cfg());
  const auto out = lm.forward(batch_of({two_image_sequence()}), random_latents(2, 8, 2), {});
  const auto lp = log_softmax(out.text_logits, -1).value();
  const std::size_t V = 16;
  for (std::size_t r = 0; r < lp.numel() / V; ++r) {
    double s = 0;
    for (std::size_t v = 0; v < V; ++v) s += std::exp(lp[r * V + v]);
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(CausalLM, TextOnlyReducesToPlainLanguageModel) {
  nn::ParameterSet<double> ps(19);
  CausalLM<double> lm(ps, "lm", small_cfg(2));
  InterleavedSequence s;
  for (int t : {1, 4, 7, 7, 9, 1}) s.append_text(t);
  const auto out = lm.forward(batch_of({s}), {}, {});
  // Plain stack: embedding lookup, positions, causal blocks, head.
  std::vector<std::size_t> ids;
  for (const auto& sl : s.slots) ids.push_back(static_cast<std::size_t>(sl.token));
  Tensor<double> h = add(embedding(lm.token_embedding(), ids), slice(lm.position_embedding(), 0, 0, ids.size()));
  const Mask causal = nn::causal_mask(1, ids.size());
  h = reshape(h, {1, ids.size(), 8});
  for (const auto& blk : lm.blocks()) h = blk(h, &causal, {});
  EXPECT_EQ(lm.head()(h).value(), out.text_logits.value());
}
