#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "lcl/autograd/grad_check.hpp"
#include "lcl/autograd/ops.hpp"
#include "lcl/core/random.hpp"

using namespace lcl;

namespace {

using TD = Tensor<double>;

NDArray<double> random_array(Shape shape, Rng& rng, double scale = 1.0) {
  NDArray<double> a(std::move(shape));
  for (auto& x : a.data()) x = rng.normal() * scale;
  return a;
}

// Contracts an arbitrary-shaped output against fixed random weights so that
// every output element contributes to the scalar with a distinct coefficient.
TD contract(const TD& y, std::uint64_t seed) {
  Rng rng(seed);
  return sum_all(mul(y, TD::constant(random_array(y.shape(), rng))));
}

}  // namespace

TEST(NDArray, ShapeInvariants) {
  NDArray<float> a({2, 3, 4});
  EXPECT_EQ(a.numel(), 24u);
  EXPECT_EQ(a.dim(-1), 4u);
  EXPECT_THROW(NDArray<float>({2, 2}, std::vector<float>{1, 2, 3}), ShapeError);
  EXPECT_THROW(a.reshaped({5, 5}), ShapeError);
  NDArray<double> s;
  EXPECT_EQ(s.numel(), 1u);
  EXPECT_EQ(s.rank(), 0u);
}

TEST(Ops, MatmulIdentity) {
  auto eye = TD::constant(NDArray<double>::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1}));
  auto a = TD::constant(NDArray<double>::from({3, 2}, {1, 2, 3, 4, 5, 6}));
  auto y = matmul(eye, a);
  EXPECT_EQ(y.value(), a.value());
}

TEST(Ops, MatmulBatched) {
  Rng rng(3);
  auto a = TD::constant(random_array({2, 3, 4}, rng));
  auto b = TD::constant(random_array({2, 4, 5}, rng));
  auto y = matmul(a, b);
  ASSERT_EQ(y.shape(), (Shape{2, 3, 5}));
  for (std::size_t bi = 0; bi < 2; ++bi)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 5; ++j) {
        double acc = 0;
        for (std::size_t k = 0; k < 4; ++k) acc += a.value().at(bi, i, k) * b.value().at(bi, k, j);
        EXPECT_NEAR(y.value().at(bi, i, j), acc, 1e-12);
      }
}

TEST(Ops, SoftmaxOfZerosIsUniform) {
  auto x = TD::constant(NDArray<double>({4}));
  auto y = softmax(x, 0);
  for (double v : y.value().data()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Ops, SoftmaxStableForLargeLogits) {
  auto x = TD::constant(NDArray<double>::from({3}, {1000.0, 1000.0, 0.0}));
  auto y = softmax(x);
  EXPECT_NEAR(y.value()[0], 0.5, 1e-12);
  EXPECT_NEAR(y.value()[2], 0.0, 1e-12);
  auto ls = log_softmax(x);
  EXPECT_NEAR(ls.value()[0], -std::log(2.0), 1e-12);
}

TEST(Ops, SoftmaxFullyMaskedRowThrows) {
  auto x = TD::constant(NDArray<double>({2, 3}));
  Mask m({2, 3});
  for (std::size_t j = 0; j < 3; ++j) m.at(1, j) = 1;
  auto filled = masked_fill(x, m, -std::numeric_limits<double>::infinity());
  EXPECT_THROW(softmax(filled), NumericError);
}

TEST(Ops, LayerNormZeroMeanUnitVariance) {
  auto x = TD::constant(NDArray<double>::from({3}, {1, 2, 3}));
  auto y = layer_norm(x, 1e-5);
  double mu = 0, var = 0;
  for (double v : y.value().data()) mu += v;
  mu /= 3;
  for (double v : y.value().data()) var += (v - mu) * (v - mu);
  var /= 3;
  EXPECT_NEAR(mu, 0.0, 1e-6);
  // var(y) = var(x) / (var(x) + eps) with var(x) = 2/3.
  EXPECT_NEAR(var, (2.0 / 3.0) / (2.0 / 3.0 + 1e-5), 1e-12);
}

TEST(Ops, ShapeMismatchNamesOpAndShapes) {
  auto a = TD::constant(NDArray<double>({2, 3}));
  auto b = TD::constant(NDArray<double>({4, 5}));
  try {
    matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("matmul"), std::string::npos);
    EXPECT_NE(msg.find("(2, 3)"), std::string::npos);
    EXPECT_NE(msg.find("(4, 5)"), std::string::npos);
  }
  EXPECT_THROW(add(a, TD::constant(NDArray<double>({2}))), ShapeError);
}

TEST(Ops, NonFiniteOutputIsAnError) {
  auto x = TD::constant(NDArray<double>::from({2}, {0.0, 1.0}));
  EXPECT_THROW(log(x), NumericError);
  auto big = TD::constant(NDArray<double>::from({1}, {1e6}));
  EXPECT_THROW(exp(big), NumericError);
}

TEST(Backward, SumOfSquares) {
  auto w = TD::parameter(NDArray<double>::from({2}, {1, 2}));
  backward(sum_all(mul(w, w)));
  EXPECT_EQ(w.grad(), NDArray<double>::from({2}, {2, 4}));
}

TEST(Backward, MeanGivesUniformGradient) {
  auto x = TD::parameter(NDArray<double>({4}, 3.0));
  backward(mean_all(x));
  for (double g : x.grad().data()) EXPECT_DOUBLE_EQ(g, 0.25);
}

TEST(Backward, AccumulatesAcrossUsesAndCalls) {
  auto x = TD::parameter(NDArray<double>::from({1}, {3.0}));
  backward(sum_all(add(x, x)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
  backward(sum_all(x));
  EXPECT_DOUBLE_EQ(x.grad()[0], 3.0);
  x.zero_grad();
  EXPECT_DOUBLE_EQ(x.grad()[0], 0.0);
}

TEST(Backward, Errors) {
  auto x = TD::parameter(NDArray<double>({3}, 1.0));
  EXPECT_THROW(backward(x), ShapeError);
  auto c = TD::constant(NDArray<double>({3}, 1.0));
  EXPECT_THROW(c.grad(), std::logic_error);
  EXPECT_THROW(x.detach().grad(), std::logic_error);
  EXPECT_THROW(backward(sum_all(c)), std::logic_error);
}

TEST(Backward, TapeIsTopologicalAndVisitsOnce) {
  auto x = TD::parameter(NDArray<double>({2}, 1.0));
  auto y = mul(x, x);
  auto z = add(y, y);
  auto loss = sum_all(add(z, y));
  auto tape = ComputationTape<double>::from(loss);
  ASSERT_EQ(tape.ops.size(), 5u);
  for (std::size_t i = 0; i < tape.ops.size(); ++i) {
    for (auto& p : tape.ops[i]->parents) {
      auto pos = std::find(tape.ops.begin(), tape.ops.end(), p.get());
      ASSERT_NE(pos, tape.ops.end());
      EXPECT_LT(pos - tape.ops.begin(), static_cast<std::ptrdiff_t>(i));
    }
  }
  backward(loss);
  // d/dx sum(3 x^2) = 6x
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
}

TEST(GradCheck, SumOfSquaresIsExactToRounding) {
  Rng rng(1);
  auto r = finite_difference_check([](const std::vector<TD>& in) { return sum_all(mul(in[0], in[0])); },
                                   {TD::parameter(random_array({5}, rng))});
  EXPECT_LE(r.max_relative_error, 1e-8);
}

// One scalar function per op kind, built so every input element matters.
struct OpCase {
  const char* name;
  std::vector<Shape> shapes;
  std::function<TD(const std::vector<TD>&)> f;
};

class OpGradient : public ::testing::TestWithParam<int> {};

std::vector<OpCase> op_cases() {
  return {
      {"matmul", {{3, 4}, {4, 2}}, [](auto& in) { return contract(matmul(in[0], in[1]), 11); }},
      {"matmul-batched", {{2, 3, 4}, {2, 4, 2}}, [](auto& in) { return contract(matmul(in[0], in[1]), 12); }},
      {"add-broadcast", {{2, 3, 4}, {4}}, [](auto& in) { return contract(add(in[0], in[1]), 13); }},
      {"mul-broadcast", {{3, 4}, {4}}, [](auto& in) { return contract(mul(in[0], in[1]), 14); }},
      {"scale", {{5}}, [](auto& in) { return contract(scale(in[0], -1.7), 15); }},
      {"exp", {{2, 3}}, [](auto& in) { return contract(exp(in[0]), 16); }},
      {"log", {{4}}, [](auto& in) { return contract(log(add_scalar(mul(in[0], in[0]), 0.5)), 17); }},
      {"softmax-axis0", {{3, 4}}, [](auto& in) { return contract(softmax(in[0], 0), 18); }},
      {"softmax-axis1", {{3, 4}}, [](auto& in) { return contract(softmax(in[0], 1), 19); }},
      {"log-softmax", {{2, 5}}, [](auto& in) { return contract(log_softmax(in[0], -1), 20); }},
      {"layer-normalize", {{3, 6}}, [](auto& in) { return contract(layer_norm(in[0], 1e-5), 21); }},
      {"mean-over-axis", {{3, 4, 2}}, [](auto& in) { return contract(mean(in[0], 1), 22); }},
      {"sum-over-axis", {{3, 4}}, [](auto& in) { return contract(sum(in[0], 0), 23); }},
      {"concat", {{2, 3}, {2, 2}}, [](auto& in) { return contract(concat(std::vector<TD>{in[0], in[1]}, 1), 24); }},
      {"slice", {{4, 5}}, [](auto& in) { return contract(slice(in[0], 1, 1, 4), 25); }},
      {"gather", {{5, 3}}, [](auto& in) { return contract(gather_rows(in[0], {4, 0, 4, 2}), 26); }},
      {"masked-fill", {{3, 4}},
       [](auto& in) {
         Mask m({3, 4});
         m.at(0, 1) = m.at(2, 3) = 1;
         return contract(softmax(masked_fill(in[0], m, -std::numeric_limits<double>::infinity())), 27);
       }},
      {"transpose", {{2, 3, 4}}, [](auto& in) { return contract(transpose(in[0], 0, 2), 28); }},
      {"permute", {{2, 3, 4, 2}}, [](auto& in) { return contract(permute(in[0], {0, 2, 1, 3}), 29); }},
      {"embedding-lookup", {{6, 3}}, [](auto& in) { return contract(embedding(in[0], {1, 5, 1}), 30); }},
      {"gelu", {{7}}, [](auto& in) { return contract(gelu(in[0]), 31); }},
      {"take-along-last", {{3, 4}}, [](auto& in) { return contract(take_along_last(in[0], {3, 0, 2}), 32); }},
      {"expand-leading", {{2, 3}}, [](auto& in) { return contract(expand_leading(in[0], 3), 33); }},
      {"reshape", {{2, 6}}, [](auto& in) { return contract(reshape(in[0], {3, 4}), 34); }},
  };
}

TEST_P(OpGradient, MatchesFiniteDifferencesOverSeeds) {
  const OpCase c = op_cases()[static_cast<std::size_t>(GetParam())];
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed * 7919 + 1);
    std::vector<TD> inputs;
    for (const auto& s : c.shapes) inputs.push_back(TD::parameter(random_array(s, rng)));
    auto r = finite_difference_check(c.f, inputs, 1e-5);
    EXPECT_LE(r.max_relative_error, 1e-4) << c.name << " seed " << seed;
  }
}

INSTANTIATE_TEST_SUITE_P(AllKinds, OpGradient, ::testing::Range(0, static_cast<int>(op_cases().size())),
                         [](const auto& info) {
                           std::string n = op_cases()[static_cast<std::size_t>(info.param)].name;
                           for (auto& ch : n)
                             if (ch == '-') ch = '_';
                           return n;
                         });

TEST(Backward, Linearity) {
  Rng rng(5);
  auto x = TD::parameter(random_array({3, 4}, rng));
  auto f = [&] { return contract(softmax(matmul(x, transpose(x, 0, 1))), 40); };
  auto g = [&] { return contract(gelu(layer_norm(x)), 41); };
  const double alpha = 0.7, beta = -1.3;
  backward(f());
  const auto gf = x.grad();
  x.zero_grad();
  backward(g());
  const auto gg = x.grad();
  x.zero_grad();
  backward(add(scale(f(), alpha), scale(g(), beta)));
  const auto gc = x.grad();
  for (std::size_t i = 0; i < gc.numel(); ++i) EXPECT_NEAR(gc[i], alpha * gf[i] + beta * gg[i], 1e-10);
}

TEST(Backward, DeterministicBitwise) {
  auto run = [] {
    Rng rng(9);
    auto x = Tensor<float>::parameter(random_array({8, 16}, rng).cast<float>());
    auto w = Tensor<float>::parameter(random_array({16, 8}, rng).cast<float>());
    auto loss = mean_all(log_softmax(gelu(matmul(x, w))));
    backward(loss);
    return std::make_pair(loss.item(), w.grad());
  };
  auto [l1, g1] = run();
  auto [l2, g2] = run();
  EXPECT_EQ(l1, l2);
  EXPECT_EQ(g1, g2);
}
