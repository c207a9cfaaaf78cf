#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lcl/autograd/grad_check.hpp"
#include "lcl/objective/report.hpp"
#include "../support/loss_oracles.hpp"

using namespace lcl;

namespace {

NDArray<double> random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  NDArray<double> a({r, c});
  for (auto& x : a.data()) x = rng.normal() * scale;
  return a;
}

Tensor<double> constant(const NDArray<double>& a) { return Tensor<double>::constant(a); }

void set_weight(const nn::Linear<double>& lin, const NDArray<double>& w) {
  auto handle = lin.weight();
  handle.mutable_value() = w;
}

void set_log_tau(const ContrastiveHead<double>& head, double lt) {
  auto handle = head.log_tau();
  handle.mutable_value()[0] = lt;
}

struct HeadFixture {
  nn::ParameterSet<double> ps{11};
  ContrastiveHead<double> head;
  HeadFixture(std::size_t dv, std::size_t dt, std::size_t e, bool normalize = false)
      : head(ps, "head", dv, dt, e, normalize) {}
};

BatchedSequence text_batch(const std::vector<std::int32_t>& tokens, bool gen_specials = true) {
  InterleavedSequence s;
  for (auto t : tokens) s.append_text(t);
  CollateOptions o;
  o.max_seq_len = 64;
  o.patches_per_image = 2;
  o.gen_specials = gen_specials;
  return collate_batch({s}, o);
}

}  // namespace

TEST(Contrastive, IdentitySimilarityClosedForm) {
  NDArray<double> s({2, 2}, 0.0);
  s.at(0, 0) = s.at(1, 1) = 1.0;
  const auto r = contrastive_from_similarity(constant(s));
  const double per = -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0));
  EXPECT_NEAR(r.context_to_image.item(), per, 1e-12);
  EXPECT_NEAR(r.image_to_context.item(), per, 1e-12);
  EXPECT_NEAR(r.loss.item(), 2 * per, 1e-12);
  EXPECT_NEAR(r.loss.item(), 0.62652, 1e-5);
}

TEST(Contrastive, IdentityThroughHead) {
  HeadFixture f(2, 2, 2);
  const auto eye = NDArray<double>::from({2, 2}, {1, 0, 0, 1});
  set_weight(f.head.w1(), eye);
  set_weight(f.head.w2(), eye);
  set_log_tau(f.head, 0.0);
  const auto r = contrastive_loss(constant(eye), constant(eye), f.head);
  EXPECT_NEAR(r.loss.item(), 0.62652, 1e-5);
  EXPECT_NEAR(r.similarity.at(0, 0), 1.0, 1e-15);
  EXPECT_NEAR(r.similarity.at(0, 1), 0.0, 1e-15);
}

TEST(Contrastive, IdenticalInputsGiveChance) {
  for (std::size_t b : {2u, 5u, 9u}) {
    HeadFixture f(3, 4, 5);
    NDArray<double> v({b, 3}, 0.3), t({b, 4}, -0.7);
    const auto r = contrastive_loss(constant(v), constant(t), f.head);
    EXPECT_NEAR(r.loss.item(), 2 * std::log(static_cast<double>(b)), 1e-12);
  }
}

TEST(Contrastive, MatchesLoopTranscription) {
  Rng rng(2024);
  for (int inst = 0; inst < 20; ++inst) {
    const std::size_t b = 2 + rng.below(7), dv = 1 + rng.below(6), dt = 1 + rng.below(6), e = 1 + rng.below(5);
    nn::ParameterSet<double> ps(static_cast<std::uint64_t>(inst));
    ContrastiveHead<double> head(ps, "h", dv, dt, e);
    const auto w1 = random_matrix(dv, e, rng, 0.5), w2 = random_matrix(dt, e, rng, 0.5);
    set_weight(head.w1(), w1);
    set_weight(head.w2(), w2);
    const double tau = rng.uniform(0.05, 2.0);
    set_log_tau(head, std::log(tau));
    const auto v = random_matrix(b, dv, rng), t = random_matrix(b, dt, rng);
    const double got = contrastive_loss(constant(v), constant(t), head).loss.item();
    const double want = oracle::loop_contrastive(v, t, w1, w2, std::exp(std::log(tau)));
    EXPECT_NEAR(got, want, 1e-6 * std::max(1.0, std::abs(want))) << "instance " << inst;
  }
}

TEST(Contrastive, SwappingSidesSwapsDirections) {
  Rng rng(5);
  HeadFixture a(3, 4, 2), b(4, 3, 2);
  const auto w1 = random_matrix(3, 2, rng), w2 = random_matrix(4, 2, rng);
  set_weight(a.head.w1(), w1);
  set_weight(a.head.w2(), w2);
  set_weight(b.head.w1(), w2);
  set_weight(b.head.w2(), w1);
  const auto v = random_matrix(5, 3, rng), t = random_matrix(5, 4, rng);
  const auto ra = contrastive_loss(constant(v), constant(t), a.head);
  const auto rb = contrastive_loss(constant(t), constant(v), b.head);
  EXPECT_NEAR(ra.loss.item(), rb.loss.item(), 1e-12);
  EXPECT_NEAR(ra.context_to_image.item(), rb.image_to_context.item(), 1e-12);
  EXPECT_NEAR(ra.image_to_context.item(), rb.context_to_image.item(), 1e-12);
}

TEST(Contrastive, PermutationInvariant) {
  Rng rng(8);
  HeadFixture f(6, 5, 4);
  const std::size_t b = 7;
  const auto v = random_matrix(b, 6, rng), t = random_matrix(b, 5, rng);
  std::vector<std::size_t> perm(b);
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm.begin(), perm.end());
  NDArray<double> vp({b, 6}), tp({b, 5});
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < 6; ++j) vp.at(i, j) = v.at(perm[i], j);
    for (std::size_t j = 0; j < 5; ++j) tp.at(i, j) = t.at(perm[i], j);
  }
  EXPECT_NEAR(contrastive_loss(constant(v), constant(t), f.head).loss.item(),
              contrastive_loss(constant(vp), constant(tp), f.head).loss.item(), 1e-6);
}

TEST(Contrastive, SharperTemperatureLowersDiagonalLoss) {
  const auto m = NDArray<double>::from({3, 3}, {1.0, 0.2, -0.1, 0.3, 0.9, 0.0, -0.2, 0.1, 1.1});
  double prev = std::numeric_limits<double>::infinity();
  for (double tau : {1.0, 0.5, 0.1}) {
    NDArray<double> s = m;
    for (auto& x : s.data()) x /= tau;
    const double l = contrastive_from_similarity(constant(s)).loss.item();
    EXPECT_LT(l, prev) << "tau " << tau;
    prev = l;
  }
}

TEST(Contrastive, GradientsMatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Rng rng(seed);
    HeadFixture f(8, 8, 6);
    const auto v = random_matrix(4, 8, rng), t = random_matrix(4, 8, rng);
    set_log_tau(f.head, std::log(0.5));
    const auto res = finite_difference_check(
        [&](const std::vector<Tensor<double>>& in) { return contrastive_loss(in[0], in[1], f.head).loss; },
        {constant(v), constant(t)});
    EXPECT_LE(res.max_relative_error, 1e-4) << "seed " << seed;
  }
}

TEST(Contrastive, ParameterGradientsMatchFiniteDifferences) {
  Rng rng(3);
  const auto v = constant(random_matrix(4, 5, rng)), t = constant(random_matrix(4, 3, rng));
  const auto w1 = constant(random_matrix(5, 4, rng, 0.4)), w2 = constant(random_matrix(3, 4, rng, 0.4));
  NDArray<double> lt({1}, std::log(0.3));
  const auto res = finite_difference_check(
      [&](const std::vector<Tensor<double>>& in) {
        const auto s = mul(matmul(matmul(t, in[1]), transpose(matmul(v, in[0]), 0, 1)), exp(scale(in[2], -1.0)));
        return contrastive_from_similarity(s).loss;
      },
      {w1, w2, constant(lt)});
  EXPECT_LE(res.max_relative_error, 1e-4);
}

TEST(Contrastive, NormalizedHeadIgnoresScale) {
  Rng rng(4);
  HeadFixture f(4, 4, 3, true);
  const auto v = random_matrix(3, 4, rng), t = random_matrix(3, 4, rng);
  NDArray<double> v2 = v;
  for (std::size_t j = 0; j < 4; ++j) v2.at(1, j) *= 7.5;
  EXPECT_NEAR(contrastive_loss(constant(v), constant(t), f.head).loss.item(),
              contrastive_loss(constant(v2), constant(t), f.head).loss.item(), 1e-8);
  const auto s = contrastive_loss(constant(v), constant(t), f.head).similarity;
  for (double x : s.data()) EXPECT_LE(std::abs(x), 1.0 / kInitTemperature + 1e-9);
}

TEST(Contrastive, ExcludedNegativesDropOut) {
  const auto s = NDArray<double>::from({3, 3}, {2.0, 1.5, 0.1, 0.7, 1.0, -0.3, 0.2, 0.4, 0.9});
  Mask ex({3, 3}, 0);
  ex.at(0, 1) = ex.at(1, 0) = 1;
  const double got = contrastive_from_similarity(constant(s), &ex).loss.item();
  auto lse = [](std::vector<double> xs) {
    double z = 0;
    for (double x : xs) z += std::exp(x);
    return std::log(z);
  };
  const double rows = (lse({2.0, 0.1}) - 2.0) + (lse({1.0, -0.3}) - 1.0) + (lse({0.2, 0.4, 0.9}) - 0.9);
  const double cols = (lse({2.0, 0.2}) - 2.0) + (lse({1.0, 0.4}) - 1.0) + (lse({0.1, -0.3, 0.9}) - 0.9);
  EXPECT_NEAR(got, (rows + cols) / 3.0, 1e-12);
}

TEST(Contrastive, Errors) {
  HeadFixture f(2, 2, 2);
  EXPECT_THROW(contrastive_loss(constant(NDArray<double>({1, 2}, 1.0)), constant(NDArray<double>({1, 2}, 1.0)), f.head),
               std::invalid_argument);
  EXPECT_THROW(contrastive_loss(constant(NDArray<double>({3, 2}, 1.0)), constant(NDArray<double>({2, 2}, 1.0)), f.head),
               ShapeError);
  NDArray<double> bad({2, 2}, 1.0);
  bad.at(0, 1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(contrastive_loss(constant(bad), constant(NDArray<double>({2, 2}, 1.0)), f.head), NumericError);
}

TEST(Contrastive, TemperatureClamp) {
  HeadFixture f(2, 2, 2);
  EXPECT_NEAR(f.head.tau(), 0.07, 1e-12);
  set_log_tau(f.head, std::log(0.001));
  f.head.clamp_temperature();
  EXPECT_NEAR(f.head.tau(), 0.01, 1e-12);
  set_log_tau(f.head, std::log(0.5));
  f.head.clamp_temperature();
  EXPECT_NEAR(f.head.tau(), 0.5, 1e-12);
}

TEST(Generation, UniformLogitsGiveLogVocab) {
  const auto b = text_batch({1, 4, 5, 6, 4, 1});
  const auto logits = constant(NDArray<double>({b.rows, b.width, 7}, 0.25));
  EXPECT_NEAR(generation_loss(logits, b).item(), std::log(7.0), 1e-6);
  EXPECT_NEAR(std::log(7.0), 1.94591, 1e-5);
}

TEST(Generation, MarginDrivesLossToZero) {
  const std::vector<std::int32_t> toks{1, 4, 5, 6};
  const auto b = text_batch(toks);
  double prev = std::numeric_limits<double>::infinity();
  for (double margin : {1.0, 5.0, 20.0, 40.0}) {
    NDArray<double> l({1, b.width, 7}, 0.0);
    for (std::size_t p = 0; p + 1 < toks.size(); ++p) l.at(0, p, static_cast<std::size_t>(toks[p + 1])) = margin;
    const double loss = generation_loss(constant(l), b).item();
    EXPECT_LT(loss, prev);
    prev = loss;
  }
  EXPECT_LT(prev, 1e-15);
}

TEST(Generation, HandComputedThreeTokens) {
  // </s> a a over a vocabulary of 5; the last row predicts nothing.
  const auto b = text_batch({1, 4, 4});
  NDArray<double> l({1, 3, 5}, 0.0);
  const double r0[5] = {0.1, -0.4, 0.0, 0.3, 1.2};
  const double r1[5] = {-1.0, 0.5, 0.2, 0.0, 0.7};
  for (std::size_t k = 0; k < 5; ++k) {
    l.at(0, 0, k) = r0[k];
    l.at(0, 1, k) = r1[k];
    l.at(0, 2, k) = 9.0;
  }
  auto nll = [](const double* r, std::size_t target) {
    double z = 0;
    for (std::size_t k = 0; k < 5; ++k) z += std::exp(r[k]);
    return -(r[target] - std::log(z));
  };
  const double want = 0.5 * (nll(r0, 4) + nll(r1, 4));
  EXPECT_NEAR(generation_loss(constant(l), b).item(), want, 1e-12);
}

TEST(Generation, MatchesLoopOnRandomLogits) {
  Rng rng(12);
  std::vector<InterleavedSequence> seqs(3);
  for (auto& s : seqs) {
    s.append_text(1);
    const auto n = 2 + rng.below(8);
    for (std::size_t i = 0; i < n; ++i) s.append_text(static_cast<std::int32_t>(4 + rng.below(6)));
  }
  CollateOptions o;
  o.max_seq_len = 32;
  o.patches_per_image = 2;
  const auto b = collate_batch(seqs, o);
  NDArray<double> l({b.rows, b.width, 10});
  for (auto& x : l.data()) x = rng.normal() * 2;
  double sum = 0;
  std::size_t count = 0;
  for (std::size_t r = 0; r < seqs.size(); ++r)
    for (std::size_t p = 1; p < seqs[r].slots.size(); ++p) {
      double z = 0;
      for (std::size_t k = 0; k < 10; ++k) z += std::exp(l.at(r, p - 1, k));
      sum -= l.at(r, p - 1, static_cast<std::size_t>(seqs[r].slots[p].token)) - std::log(z);
      ++count;
    }
  EXPECT_NEAR(generation_loss(constant(l), b).item(), sum / static_cast<double>(count), 1e-12);
}

TEST(Generation, SpecialsSwitch) {
  const auto on = text_batch({1, 4, 5, 1}, true), off = text_batch({1, 4, 5, 1}, false);
  EXPECT_EQ(generation_targets(on).tokens.size(), 3u);
  EXPECT_EQ(generation_targets(off).tokens.size(), 2u);
}

TEST(Generation, Errors) {
  const auto b = text_batch({1});
  EXPECT_THROW(generation_loss(constant(NDArray<double>({1, 1, 5}, 0.0)), b), std::invalid_argument);
  const auto b2 = text_batch({1, 4});
  EXPECT_THROW(generation_loss(constant(NDArray<double>({1, 3, 5}, 0.0)), b2), ShapeError);
}

TEST(TotalLoss, WeightedSum) {
  const auto con = constant(NDArray<double>::scalar(1.0)), gen = constant(NDArray<double>::scalar(2.0));
  EXPECT_NEAR(total_loss(con, gen, 0.1).item(), 2.1, 1e-15);
  EXPECT_EQ(total_loss(con, gen, 0.0).item(), 2.0);
  EXPECT_EQ(total_loss(Tensor<double>{}, gen, 0.1).item(), 2.0);
  EXPECT_THROW(total_loss(con, gen, -0.1), std::invalid_argument);
}

TEST(Collapse, IdenticalRowsHaveZeroVariance) {
  NDArray<double> v({6, 4}, 0.0);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 4; ++j) v.at(i, j) = 0.5 + static_cast<double>(j);
  const auto m = collapse_metrics(v, &v, &v);
  EXPECT_NEAR(m.variance, 0.0, 1e-15);
  EXPECT_LT(m.variance, kCollapseThreshold);
  EXPECT_NEAR(m.uniformity, 0.0, 1e-15);
  EXPECT_NEAR(m.alignment, 0.0, 1e-15);
}

TEST(Collapse, OrthonormalRows) {
  const std::size_t d = 8;
  NDArray<double> v({d, d}, 0.0);
  for (std::size_t i = 0; i < d; ++i) v.at(i, i) = 3.0;
  // Each coordinate is 1 on one row of d and 0 elsewhere: variance (1/d)(1 - 1/d), summed over d coordinates.
  const double per_dim = (1.0 / d) * (1.0 - 1.0 / d);
  const auto m = collapse_metrics(v);
  EXPECT_NEAR(m.variance, per_dim * d, 1e-12);
  EXPECT_NEAR(m.uniformity, -4.0, 1e-12);
  EXPECT_TRUE(std::isnan(m.alignment));
}

TEST(Collapse, GaussianRowsFarFromCollapse) {
  Rng rng(77);
  const auto v = random_matrix(64, 32, rng);
  const double reference = 1.0 - 1.0 / 32.0;
  const auto m = collapse_metrics(v);
  EXPECT_GT(m.variance, 0.1 * reference);
  EXPECT_LE(m.variance, 1.0);
}

TEST(Collapse, AlignmentOfOrthogonalPairs) {
  const auto a = NDArray<double>::from({2, 2}, {1, 0, 0, 2});
  const auto c = NDArray<double>::from({2, 2}, {0, 5, -1, 0});
  const auto m = collapse_metrics(a, &a, &c);
  EXPECT_NEAR(m.alignment, std::sqrt(2.0), 1e-12);
}

TEST(Collapse, TooFewRowsGiveNaN) {
  const auto m = collapse_metrics(NDArray<double>({1, 3}, 1.0));
  EXPECT_TRUE(std::isnan(m.variance));
}

TEST(LossReport, FixedFieldOrderAndRoundTrip) {
  LossReport r;
  r.step = 3;
  r.total = 2.1;
  r.contrastive = 1.0;
  r.generation = 2.0;
  r.tau = 0.07;
  r.collapse = {0.5, 0.25, -1.5};
  r.lr = 1e-4;
  r.lambda = 0.1;
  const auto j = r.to_json();
  std::vector<std::string> keys;
  for (auto it = j.begin(); it != j.end(); ++it) keys.push_back(it.key());
  const std::vector<std::string> head(keys.begin(), keys.begin() + 9);
  EXPECT_EQ(head, (std::vector<std::string>{"step", "L_total", "L_con", "L_gen", "tau", "variance", "alignment",
                                            "uniformity", "lr"}));
  const auto back = LossReport::from_json(nlohmann::json::parse(r.to_line()));
  EXPECT_EQ(back.step, 3u);
  EXPECT_EQ(back.total, 2.1);
  EXPECT_EQ(back.collapse.uniformity, -1.5);
  EXPECT_NEAR(back.total, back.lambda * back.contrastive + back.generation, 1e-6);
}

TEST(LossReport, NonFiniteBecomesNull) {
  LossReport r;
  const auto j = r.to_json();
  EXPECT_TRUE(j["variance"].is_null());
  EXPECT_TRUE(std::isnan(LossReport::from_json(nlohmann::json::parse(r.to_line())).collapse.variance));
}
