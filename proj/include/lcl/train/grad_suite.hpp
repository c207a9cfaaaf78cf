#pragma once

#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "lcl/autograd/grad_check.hpp"
#include "lcl/autograd/ops.hpp"
#include "lcl/train/model.hpp"

namespace lcl {

struct GradCase {
  std::string name;
  std::vector<Shape> shapes;
  std::function<Tensor<double>(const std::vector<Tensor<double>>&)> f;
};

struct GradCaseResult {
  std::string name;
  std::size_t seeds = 0;
  double max_relative_error = 0;
  std::uint64_t worst_seed = 0;
  std::size_t elements = 0;
};

namespace detail {

inline NDArray<double> normal_array(Shape shape, Rng& rng) {
  NDArray<double> a(std::move(shape));
  for (auto& x : a.data()) x = rng.normal();
  return a;
}

inline Tensor<double> weigh(const Tensor<double>& y, std::uint64_t seed) {
  Rng rng(seed);
  return sum_all(mul(y, Tensor<double>::constant(normal_array(y.shape(), rng))));
}

}  // namespace detail

/// One scalar function per op kind; outputs are contracted with fixed
/// random weights so every element contributes.
inline std::vector<GradCase> op_grad_cases() {
  using TD = Tensor<double>;
  using detail::weigh;
  const double ninf = -std::numeric_limits<double>::infinity();
  return {
      {"matmul", {{3, 4}, {4, 2}}, [](auto& in) { return weigh(matmul(in[0], in[1]), 11); }},
      {"matmul_batched", {{2, 3, 4}, {2, 4, 2}}, [](auto& in) { return weigh(matmul(in[0], in[1]), 12); }},
      {"add", {{2, 3, 4}, {4}}, [](auto& in) { return weigh(add(in[0], in[1]), 13); }},
      {"sub", {{3, 4}, {3, 4}}, [](auto& in) { return weigh(sub(in[0], in[1]), 14); }},
      {"mul", {{3, 4}, {4}}, [](auto& in) { return weigh(mul(in[0], in[1]), 15); }},
      {"scale", {{5}}, [](auto& in) { return weigh(scale(in[0], -1.7), 16); }},
      {"add_scalar", {{5}}, [](auto& in) { return weigh(mul(add_scalar(in[0], 0.3), in[0]), 17); }},
      {"exp", {{2, 3}}, [](auto& in) { return weigh(exp(in[0]), 18); }},
      {"log", {{4}}, [](auto& in) { return weigh(log(add_scalar(mul(in[0], in[0]), 0.5)), 19); }},
      {"gelu", {{7}}, [](auto& in) { return weigh(gelu(in[0]), 20); }},
      {"sum", {{3, 4}}, [](auto& in) { return weigh(sum(in[0], 0), 21); }},
      {"mean", {{3, 4, 2}}, [](auto& in) { return weigh(mean(in[0], 1), 22); }},
      {"sum_all", {{3, 2}}, [](auto& in) { return sum_all(mul(in[0], in[0])); }},
      {"mean_all", {{3, 2}}, [](auto& in) { return mean_all(exp(in[0])); }},
      {"softmax", {{3, 4}}, [](auto& in) { return weigh(softmax(in[0], 0), 23); }},
      {"log_softmax", {{2, 5}}, [](auto& in) { return weigh(log_softmax(in[0], -1), 24); }},
      {"layer_norm", {{3, 6}}, [](auto& in) { return weigh(layer_norm(in[0], 1e-5), 25); }},
      {"reshape", {{2, 6}}, [](auto& in) { return weigh(reshape(in[0], {3, 4}), 26); }},
      {"permute", {{2, 3, 4, 2}}, [](auto& in) { return weigh(permute(in[0], {0, 2, 1, 3}), 27); }},
      {"transpose", {{2, 3, 4}}, [](auto& in) { return weigh(transpose(in[0], 0, 2), 28); }},
      {"concat", {{2, 3}, {2, 2}}, [](auto& in) { return weigh(concat(std::vector<TD>{in[0], in[1]}, 1), 29); }},
      {"slice", {{4, 5}}, [](auto& in) { return weigh(slice(in[0], 1, 1, 4), 30); }},
      {"gather_rows", {{5, 3}}, [](auto& in) { return weigh(gather_rows(in[0], {4, 0, 4, 2}), 31); }},
      {"embedding", {{6, 3}}, [](auto& in) { return weigh(embedding(in[0], {1, 5, 1}), 32); }},
      {"take_along_last", {{3, 4}}, [](auto& in) { return weigh(take_along_last(in[0], {3, 0, 2}), 33); }},
      {"masked_fill", {{3, 4}},
       [ninf](auto& in) {
         Mask m({3, 4});
         m.at(0, 1) = m.at(2, 3) = 1;
         return weigh(softmax(masked_fill(in[0], m, ninf)), 34);
       }},
      {"expand_leading", {{2, 3}}, [](auto& in) { return weigh(expand_leading(in[0], 3), 35); }},
  };
}

inline GradCaseResult check_grad_case(const GradCase& c, std::size_t seeds, double eps = 1e-5) {
  GradCaseResult r{c.name, seeds, 0, 0, 0};
  for (std::uint64_t seed = 0; seed < seeds; ++seed) {
    Rng rng(derive_seed(seed, c.name));
    std::vector<Tensor<double>> inputs;
    for (const auto& s : c.shapes) inputs.push_back(Tensor<double>::parameter(detail::normal_array(s, rng)));
    const auto g = finite_difference_check(c.f, inputs, eps);
    r.elements += g.elements_checked;
    if (g.max_relative_error >= r.max_relative_error) {
      r.max_relative_error = g.max_relative_error;
      r.worst_seed = seed;
    }
  }
  return r;
}

/// Smallest joint model that still has every component.
inline TrainConfig grad_check_config() {
  return TrainConfig::parse(
      "vision.image_size=8\nvision.patch_size=4\nvision.hidden_dim=8\nvision.depth=1\nvision.num_heads=2\n"
      "vision.mlp_ratio=2\nlm.hidden_dim=8\nlm.depth=1\nlm.num_heads=2\nlm.mlp_ratio=2\nlm.max_seq_len=16\n"
      "max_len=16\nembed_dim=8\ncorpus.num_docs=1",
      "grad check config");
}

/// Two (caption, image) pairs, one caption-first and one image-first.
inline BatchedSequence two_image_batch(const TrainConfig& cfg, std::uint64_t seed) {
  const Vocabulary vocab = cfg.corpus.vocabulary();
  const auto pairs = make_eval_pairs(cfg.corpus, vocab, 2, seed);
  const std::size_t P = cfg.model.patches_per_image();
  std::vector<InterleavedSequence> rows;
  for (std::size_t i = 0; i < 2; ++i) {
    InterleavedSequence s;
    s.append_text(cfg.model.lm.specials.eos);
    ImageRef ref;
    ref.pixels = pairs[i].image;
    ref.image_id = i;
    ref.caption = pairs[i].caption;
    ref.attrs = pairs[i].attrs;
    if (i == 0) s.append_tokens(pairs[i].caption);
    s.append_image(ref, P, cfg.model.lm.specials);
    if (i == 1) s.append_tokens(pairs[i].caption);
    rows.push_back(std::move(s));
  }
  return collate_batch(rows, cfg.collate_options());
}

/// Relative-error denominator floor for whole-model checks.
inline constexpr double kModelGradFloor = 1e-5;

/// Finite-difference check of the full objective over every parameter of
/// a small model, one fresh model and batch per seed.
inline GradCaseResult check_full_objective(std::size_t seeds, double lambda = 0.5, double eps = 1e-5) {
  const TrainConfig cfg = grad_check_config();
  GradCaseResult r{"lcl_total_loss", seeds, 0, 0, 0};
  for (std::uint64_t seed = 0; seed < seeds; ++seed) {
    LCLModel<double> model(cfg.model, derive_seed(seed, "grad-check-model"));
    const BatchedSequence b = two_image_batch(cfg, seed);
    const nn::ForwardContext ctx{};
    std::vector<Tensor<double>> params;
    for (const auto& p : model.parameters().all()) params.push_back(p.tensor);
    auto f = [&](const std::vector<Tensor<double>>&) { return model.step(b, ctx, {lambda, false}).total; };
    const auto g = finite_difference_check(f, params, eps, kModelGradFloor);
    r.elements += g.elements_checked;
    if (g.max_relative_error >= r.max_relative_error) {
      r.max_relative_error = g.max_relative_error;
      r.worst_seed = seed;
    }
  }
  return r;
}

}  // namespace lcl
