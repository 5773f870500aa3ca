#include <gtest/gtest.h>

#include "semrec/autodiff.hpp"
#include "semrec/optim.hpp"
#include "semrec/rng.hpp"
#include "test_util.hpp"

namespace semrec {
namespace {

using testing::fd_gradient;
using testing::grad_rel_error;
using testing::random_tensor;

TEST(Tensor, ShapeAndData) {
  Tensor t({2, 3});
  EXPECT_EQ(t.numel(), 6);
  EXPECT_EQ(t.rank(), 2);
  t.at(1, 2) = 5.0f;
  EXPECT_FLOAT_EQ(t[5], 5.0f);
  EXPECT_THROW(Tensor({2, 2}, {1.0f, 2.0f}), ShapeError);
}

TEST(Ops, MatmulIdentity) {
  auto a = constant(Tensor({2, 2}, {1, 2, 3, 4}));
  auto eye = constant(Tensor({2, 2}, {1, 0, 0, 1}));
  auto c = matmul(a, eye);
  EXPECT_EQ(c->value.vec(), (std::vector<float>{1, 2, 3, 4}));
}

TEST(Ops, MatmulShapeMismatchNamesBothShapes) {
  auto a = constant(Tensor({2, 3}));
  auto b = constant(Tensor({2, 3}));
  try {
    matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("[2, 3]"), std::string::npos);
  }
}

TEST(Ops, SoftmaxSymmetry) {
  auto y = softmax(constant(Tensor({2}, {0, 0})));
  EXPECT_FLOAT_EQ(y->value[0], 0.5f);
  EXPECT_FLOAT_EQ(y->value[1], 0.5f);
}

TEST(Ops, EmbeddingLookupDirectRow) {
  auto table = constant(Tensor({3, 2}, {1, 0, 0, 1, 2, 2}));
  auto row = embedding_lookup(table, {2});
  EXPECT_EQ(row->value.shape(), (Shape{1, 2}));
  EXPECT_FLOAT_EQ(row->value[0], 2.0f);
  EXPECT_FLOAT_EQ(row->value[1], 2.0f);
  EXPECT_THROW(embedding_lookup(table, {3}), DataError);
}

TEST(Backward, SumOfSquares) {
  auto x = make_var(Tensor({3}, {1, 2, 3}), true);
  auto loss = sum(mul(x, x));
  backward(loss);
  EXPECT_FLOAT_EQ(x->grad[0], 2.0f);
  EXPECT_FLOAT_EQ(x->grad[1], 4.0f);
  EXPECT_FLOAT_EQ(x->grad[2], 6.0f);
}

TEST(Backward, ConstantLossLeavesGradientsZero) {
  auto x = make_var(Tensor({3}, {1, 2, 3}), true);
  auto loss = constant(Tensor::scalar(7.0f));
  backward(loss);  // nothing reachable
  EXPECT_FALSE(x->grad.defined());
}

TEST(Backward, RejectsNonScalarLoss) {
  auto x = make_var(Tensor({3}, {1, 2, 3}), true);
  EXPECT_THROW(backward(mul(x, x)), ShapeError);
}

TEST(Backward, ThreeLayerMlpMatchesFiniteDifferences) {
  Rng rng(7);
  Parameter w1(random_tensor({4, 8}, rng, 0.5), "w1");
  Parameter b1(random_tensor({8}, rng, 0.1), "b1");
  Parameter w2(random_tensor({8, 8}, rng, 0.5), "w2");
  Parameter b2(random_tensor({8}, rng, 0.1), "b2");
  Parameter w3(random_tensor({8, 2}, rng, 0.5), "w3");
  Parameter b3(random_tensor({2}, rng, 0.1), "b3");
  Tensor x = random_tensor({3, 4}, rng);

  std::vector<Parameter*> params{&w1, &b1, &w2, &b2, &w3, &b3};
  auto fwd = [&]() {
    auto h1 = gelu(add(matmul(constant(x), w1.var), b1.var));
    auto h2 = gelu(add(matmul(h1, w2.var), b2.var));
    auto out = add(matmul(h2, w3.var), b3.var);
    return mean(mul(out, out));
  };
  auto loss = fwd();
  backward(loss);
  auto fd_loss = [&]() { return static_cast<double>(fwd()->value[0]); };
  for (Parameter* p : params) {
    Tensor fd = fd_gradient(fd_loss, p->value(), 1e-3);
    EXPECT_LT(grad_rel_error(p->gradient(), fd), 1e-3) << p->name;
  }
}

// Gradient check for every differentiable op on random small inputs,
// >= 20 seeds each. Output is reduced to a scalar through fixed random
// weights so every element contributes.
class OpGradCheck : public ::testing::TestWithParam<uint64_t> {};

Var weighted_sum(const Var& out, Rng& rng) {
  Tensor w(out->value.shape());
  for (int64_t i = 0; i < w.numel(); ++i) w[i] = static_cast<float>(rng.normal());
  return sum(mul(out, constant(w)));
}

TEST_P(OpGradCheck, AllOps) {
  const uint64_t seed = GetParam();
  struct Case {
    const char* name;
    std::vector<Shape> in_shapes;
    std::function<Var(std::vector<Var>&, Rng&)> build;
  };
  const std::vector<Case> cases = {
      {"add", {{3, 4}, {3, 4}}, [](auto& in, Rng&) { return add(in[0], in[1]); }},
      {"add_broadcast", {{3, 4}, {4}}, [](auto& in, Rng&) { return add(in[0], in[1]); }},
      {"sub", {{3, 4}, {3, 4}}, [](auto& in, Rng&) { return sub(in[0], in[1]); }},
      {"mul", {{3, 4}, {3, 4}}, [](auto& in, Rng&) { return mul(in[0], in[1]); }},
      {"scale", {{3, 4}}, [](auto& in, Rng&) { return scale(in[0], 1.7f); }},
      {"matmul", {{3, 4}, {4, 2}}, [](auto& in, Rng&) { return matmul(in[0], in[1]); }},
      {"bmm", {{2, 3, 4}, {2, 4, 2}}, [](auto& in, Rng&) { return bmm(in[0], in[1]); }},
      {"permute", {{2, 3, 4}}, [](auto& in, Rng&) { return permute(in[0], {2, 0, 1}); }},
      {"reshape", {{3, 4}}, [](auto& in, Rng&) { return reshape(in[0], {2, 6}); }},
      {"concat",
       {{2, 3}, {2, 2}},
       [](auto& in, Rng&) { return concat({in[0], in[1]}, 1); }},
      {"slice", {{3, 5}}, [](auto& in, Rng&) { return slice(in[0], 1, 1, 3); }},
      {"softmax", {{3, 4}}, [](auto& in, Rng&) { return softmax(in[0]); }},
      {"layernorm",
       {{3, 4}, {4}, {4}},
       [](auto& in, Rng&) { return layernorm(in[0], in[1], in[2]); }},
      {"gelu", {{3, 4}}, [](auto& in, Rng&) { return gelu(in[0]); }},
      {"sigmoid", {{3, 4}}, [](auto& in, Rng&) { return sigmoid(in[0]); }},
      {"mean", {{3, 4}}, [](auto& in, Rng&) { return mean(mul(in[0], in[0])); }},
  };
  for (const auto& c : cases) {
    Rng rng(seed * 1000003 + 17);
    std::vector<Parameter> params;
    for (size_t i = 0; i < c.in_shapes.size(); ++i) {
      params.emplace_back(random_tensor(c.in_shapes[i], rng, 0.8),
                          str_cat(c.name, ".in", i));
    }
    Rng wrng(seed ^ 0xabcdef);
    auto fwd = [&]() {
      std::vector<Var> ins;
      for (auto& p : params) ins.push_back(p.var);
      Rng local(seed ^ 0xabcdef);
      return weighted_sum(c.build(ins, local), local);
    };
    auto loss = fwd();
    backward(loss);
    auto f = [&]() { return static_cast<double>(fwd()->value[0]); };
    for (auto& p : params) {
      Tensor fd = fd_gradient(f, p.value(), 1e-3);
      EXPECT_LT(grad_rel_error(p.gradient(), fd), 1e-3)
          << c.name << " input " << p.name << " seed " << seed;
    }
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, OpGradCheck,
                         ::testing::Range<uint64_t>(0, 20));

TEST(OpGradCheck, EmbeddingLookup) {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed + 5);
    Parameter table(random_tensor({5, 3}, rng, 0.8), "table");
    std::vector<int64_t> idx{0, 2, 2, 4};
    auto fwd = [&]() {
      Rng local(seed ^ 0x5eed);
      return weighted_sum(embedding_lookup(table.var, idx), local);
    };
    auto loss = fwd();
    backward(loss);
    auto f = [&]() { return static_cast<double>(fwd()->value[0]); };
    Tensor fd = fd_gradient(f, table.value(), 1e-3);
    EXPECT_LT(grad_rel_error(table.gradient(), fd), 1e-3) << "seed " << seed;
  }
}

TEST(OpGradCheck, BceWithLogits) {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed + 11);
    Parameter scores(random_tensor({6}, rng, 1.5), "scores");
    Tensor labels({6});
    Tensor weights({6});
    for (int64_t i = 0; i < 6; ++i) {
      labels[i] = rng.uniform() < 0.5 ? 0.0f : 1.0f;
      weights[i] = i < 5 ? 1.0f : 0.0f;  // one masked slot
    }
    auto fwd = [&]() { return bce_with_logits(scores.var, labels, weights); };
    auto loss = fwd();
    backward(loss);
    auto f = [&]() { return static_cast<double>(fwd()->value[0]); };
    Tensor fd = fd_gradient(f, scores.value(), 1e-3);
    EXPECT_LT(grad_rel_error(scores.gradient(), fd), 1e-3) << "seed " << seed;
    EXPECT_FLOAT_EQ(scores.gradient()[5], 0.0f);  // masked slot gets no gradient
  }
}

TEST(OpGradCheck, DropoutMaskIsConsistent) {
  Parameter x(Tensor({64}, std::vector<float>(64, 1.0f)), "x");
  auto fwd = [&]() {
    Rng drop_rng(99);
    auto y = dropout(x.var, 0.3f, drop_rng, true);
    Rng wrng(3);
    return weighted_sum(y, wrng);
  };
  auto loss = fwd();
  backward(loss);
  auto f = [&]() { return static_cast<double>(fwd()->value[0]); };
  Tensor fd = fd_gradient(f, x.value(), 1e-3);
  EXPECT_LT(grad_rel_error(x.gradient(), fd), 1e-3);
}

TEST(Numerics, NonFiniteRaises) {
  auto x = constant(Tensor({2}, {1e38f, 1.0f}));
  EXPECT_THROW(scale(scale(x, 1e38f), 1e38f), NumericError);
}

TEST(Adam, SingleStepMatchesHandComputedDelta) {
  std::vector<Parameter> params;
  params.emplace_back(Tensor::scalar(0.0f), "p");
  Adam opt(params, AdamConfig{0.1, 0.9, 0.999, 1e-8});
  params[0].gradient()[0] = 1.0f;
  opt.step(params);
  // t=1: mhat = 1, vhat = 1 -> delta = -lr / (1 + eps)
  EXPECT_NEAR(params[0].value()[0], -0.1, 1e-6);
  EXPECT_FLOAT_EQ(params[0].gradient()[0], 0.0f);  // zeroed after step
}

TEST(Adam, DescendsAgainstConstantGradient) {
  std::vector<Parameter> params;
  params.emplace_back(Tensor::scalar(5.0f), "p");
  Adam opt(params, {});
  for (int i = 0; i < 200; ++i) {
    params[0].gradient()[0] = 1.0f;
    opt.step(params);
  }
  EXPECT_LT(params[0].value()[0], 5.0f - 0.1f);
}

TEST(Adam, ZeroGradientLeavesParameterUnchanged) {
  std::vector<Parameter> params;
  params.emplace_back(Tensor::scalar(3.0f), "p");
  Adam opt(params, {});
  params[0].gradient().fill(0.0f);
  opt.step(params);
  EXPECT_FLOAT_EQ(params[0].value()[0], 3.0f);
}

TEST(Adam, UninitializedStateRejected) {
  std::vector<Parameter> params;
  params.emplace_back(Tensor::scalar(0.0f), "p");
  Adam opt;
  EXPECT_THROW(opt.step(params), ConfigError);
}

TEST(RngTest, SameSeedSameStream) {
  Rng a(1234), b(1234);
  for (int i = 0; i < 1000; ++i) {
    ASSERT_EQ(a.next_u64(), b.next_u64());
  }
  Rng c(1234), d(1234);
  for (int i = 0; i < 1000; ++i) {
    ASSERT_EQ(c.uniform(), d.uniform());
    ASSERT_EQ(c.normal(), d.normal());
  }
}

TEST(RngTest, UniformMeanLawOfLargeNumbers) {
  Rng rng(99);
  double acc = 0.0;
  for (int i = 0; i < 100000; ++i) acc += rng.uniform();
  const double m = acc / 100000.0;
  EXPECT_GT(m, 0.49);
  EXPECT_LT(m, 0.51);
}

TEST(RngTest, GoldenShuffle) {
  std::vector<int> xs{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  Rng rng(42);
  rng.shuffle(xs);
  // Frozen from the first verified run; guards cross-platform stream drift.
  const std::vector<int> golden{5, 7, 9, 3, 2, 0, 4, 8, 1, 6};
  EXPECT_EQ(xs, golden);
}

TEST(RngTest, UniformIntBoundsAndCategorical) {
  Rng rng(5);
  for (int i = 0; i < 1000; ++i) {
    int64_t v = rng.uniform_int(7);
    ASSERT_GE(v, 0);
    ASSERT_LT(v, 7);
  }
  std::vector<double> w{0.0, 0.0, 1.0};
  for (int i = 0; i < 50; ++i) ASSERT_EQ(rng.categorical(w), 2);
  EXPECT_THROW(rng.categorical({0.0, 0.0}), ConfigError);
  EXPECT_THROW(rng.uniform_int(0), ConfigError);
}

TEST(RngTest, NormalMomentsSane) {
  Rng rng(17);
  double s1 = 0.0, s2 = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    double z = rng.normal();
    s1 += z;
    s2 += z * z;
  }
  EXPECT_NEAR(s1 / n, 0.0, 0.02);
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

}  // namespace
}  // namespace semrec
