#include "sft/autodiff.hpp"

#include <cmath>
#include <vector>

#include "gtest/gtest.h"
#include "sft/errors.hpp"
#include "sft/gradcheck.hpp"
#include "sft/rng.hpp"

namespace sft {
namespace {

Tensor random_tensor(Shape shape, Rng& rng) {
  Tensor t(shape);
  for (double& v : t.values) v = rng.normal();
  return t;
}

// Plain triple loop.
std::vector<double> matmul_oracle(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t p = 0; p < k; ++p) c[i * n + j] += a[i * k + p] * b[p * n + j];
    }
  }
  return c;
}

// Direct sum over the receptive field of every output position.
std::vector<double> conv_oracle(const Tensor& x, const Tensor& w, std::size_t stride) {
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t O = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const std::size_t OH = (H - kh) / stride + 1, OW = (W - kw) / stride + 1;
  std::vector<double> y(B * O * OH * OW, 0.0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t i = 0; i < OH; ++i)
        for (std::size_t j = 0; j < OW; ++j) {
          double acc = 0.0;
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t u = 0; u < kh; ++u)
              for (std::size_t v = 0; v < kw; ++v)
                acc += x[((b * C + c) * H + i * stride + u) * W + j * stride + v] * w[((o * C + c) * kh + u) * kw + v];
          y[((b * O + o) * OH + i) * OW + j] = acc;
        }
  return y;
}

TEST(AutodiffTest, MatmulMatchesTripleLoop) {
  Rng rng(1);
  const Tensor a = random_tensor({4, 5}, rng), b = random_tensor({5, 3}, rng);
  Graph g;
  const Var c = matmul(g.constant(a), g.constant(b));
  EXPECT_EQ(c.shape(), (Shape{4, 3}));
  const auto expected = matmul_oracle(a, b);
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_NEAR(c.value()[i], expected[i], 1e-12);
}

TEST(AutodiffTest, MatmulGradientIsOuterProductForm) {
  Rng rng(2);
  Tensor a = random_tensor({2, 3}, rng), b = random_tensor({3, 2}, rng);
  a.track_grad = b.track_grad = true;
  Graph g;
  g.backward(sum(matmul(g.parameter(a), g.parameter(b))));
  // d/dA sum(AB) = 1 * B^T: row sums of B for every row of A.
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t p = 0; p < 3; ++p) EXPECT_NEAR(a.grad[i * 3 + p], b[p * 2] + b[p * 2 + 1], 1e-12);
  }
  for (std::size_t p = 0; p < 3; ++p) {
    for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(b.grad[p * 2 + j], a[p] + a[3 + p], 1e-12);
  }
}

TEST(AutodiffTest, MatmulShapeMismatch) {
  Graph g;
  EXPECT_THROW(matmul(g.constant(Tensor({2, 3})), g.constant(Tensor({2, 3}))), DimensionError);
}

TEST(AutodiffTest, ConvMatchesDirectSum) {
  Rng rng(3);
  for (const std::size_t stride : {1u, 2u}) {
    const Tensor x = random_tensor({2, 3, 7, 6}, rng), w = random_tensor({4, 3, 3, 2}, rng);
    Graph g;
    const Var y = conv2d(g.constant(x), g.constant(w), stride);
    const auto expected = conv_oracle(x, w, stride);
    ASSERT_EQ(y.value().size(), expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_NEAR(y.value()[i], expected[i], 1e-12);
  }
}

TEST(AutodiffTest, ConvAcceptsUnbatchedInput) {
  Rng rng(4);
  const Tensor x = random_tensor({2, 5, 5}, rng), w = random_tensor({3, 2, 3, 3}, rng);
  Graph g;
  const Var y = conv2d(g.constant(x), g.constant(w), 1);
  EXPECT_EQ(y.shape(), (Shape{3, 3, 3}));
  Tensor batched = x;
  batched.shape = {1, 2, 5, 5};
  const auto expected = conv_oracle(batched, w, 1);
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_NEAR(y.value()[i], expected[i], 1e-12);
}

TEST(AutodiffTest, ConvRejectsBadShapes) {
  Graph g;
  EXPECT_THROW(conv2d(g.constant(Tensor({1, 2, 5, 5})), g.constant(Tensor({3, 1, 3, 3})), 1), DimensionError);
  EXPECT_THROW(conv2d(g.constant(Tensor({1, 1, 2, 2})), g.constant(Tensor({3, 1, 3, 3})), 1), DimensionError);
  EXPECT_THROW(conv2d(g.constant(Tensor({1, 1, 5, 5})), g.constant(Tensor({3, 1, 3, 3})), 0), ContractError);
}

TEST(AutodiffTest, ReluSubgradientAtZeroIsZero) {
  Tensor x(Shape{4}, std::vector<double>{-1.0, 0.0, 0.5, 2.0});
  x.track_grad = true;
  Graph g;
  const Var y = relu(g.parameter(x));
  EXPECT_EQ(y.value().values, (std::vector<double>{0.0, 0.0, 0.5, 2.0}));
  g.backward(sum(y));
  EXPECT_EQ(x.grad, (std::vector<double>{0.0, 0.0, 1.0, 1.0}));
}

TEST(AutodiffTest, CrossEntropyHandFormula) {
  const Tensor logits(Shape{1, 3}, std::vector<double>{1.0, 2.0, 3.0});
  const std::size_t label[] = {0};
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  const double logp[] = {1.0 - std::log(z), 2.0 - std::log(z), 3.0 - std::log(z)};
  Graph g;
  EXPECT_NEAR(softmax_cross_entropy(g.constant(logits), label, 0.0).item(), -logp[0], 1e-14);
  // eps = 0.3, K = 3: targets 0.8, 0.1, 0.1.
  EXPECT_NEAR(softmax_cross_entropy(g.constant(logits), label, 0.3).item(),
              -(0.8 * logp[0] + 0.1 * logp[1] + 0.1 * logp[2]), 1e-14);
}

TEST(AutodiffTest, CrossEntropyGradientIsSoftmaxMinusTarget) {
  Tensor logits(Shape{2, 3}, std::vector<double>{0.5, -1.0, 2.0, 0.0, 0.0, 0.0});
  logits.track_grad = true;
  const std::size_t labels[] = {2, 1};
  Graph g;
  g.backward(softmax_cross_entropy(g.parameter(logits), labels, 0.0));
  for (std::size_t r = 0; r < 2; ++r) {
    double z = 0.0;
    for (std::size_t k = 0; k < 3; ++k) z += std::exp(logits[r * 3 + k]);
    for (std::size_t k = 0; k < 3; ++k) {
      const double p = std::exp(logits[r * 3 + k]) / z;
      EXPECT_NEAR(logits.grad[r * 3 + k], (p - (k == labels[r] ? 1.0 : 0.0)) / 2.0, 1e-14);
    }
  }
}

TEST(AutodiffTest, CrossEntropyIsStableForHugeLogits) {
  const Tensor logits(Shape{1, 2}, std::vector<double>{1000.0, 0.0});
  const std::size_t label[] = {1};
  Graph g;
  const double loss = softmax_cross_entropy(g.constant(logits), label, 0.0).item();
  EXPECT_TRUE(std::isfinite(loss));
  EXPECT_NEAR(loss, 1000.0, 1e-9);
}

TEST(AutodiffTest, CrossEntropyContracts) {
  Graph g;
  const Var logits = g.constant(Tensor({2, 3}));
  const std::size_t bad[] = {0, 3};
  const std::size_t ok[] = {0, 1};
  const std::size_t short_labels[] = {0};
  EXPECT_THROW(softmax_cross_entropy(logits, bad, 0.0), IndexError);
  EXPECT_THROW(softmax_cross_entropy(logits, ok, 1.0), ContractError);
  EXPECT_THROW(softmax_cross_entropy(logits, ok, -0.1), ContractError);
  EXPECT_THROW(softmax_cross_entropy(logits, short_labels, 0.0), DimensionError);
}

TEST(AutodiffTest, BackwardNeedsScalar) {
  Tensor x({2, 2}, 1.0);
  x.track_grad = true;
  Graph g;
  EXPECT_THROW(g.backward(relu(g.parameter(x))), ContractError);
}

TEST(AutodiffTest, TwoBackwardPassesDoubleTheGradient) {
  Rng rng(5);
  Tensor a = random_tensor({3, 3}, rng), b = random_tensor({3, 1}, rng);
  a.track_grad = true;
  auto pass = [&] {
    Graph g;
    g.backward(sum(relu(matmul(g.parameter(a), g.constant(b)))));
  };
  pass();
  const std::vector<double> once = a.grad;
  pass();
  for (std::size_t i = 0; i < once.size(); ++i) EXPECT_EQ(a.grad[i], 2.0 * once[i]);
}

TEST(AutodiffTest, UntrackedParametersGetNoGradient) {
  Tensor a({2, 2}, 1.0), b({2, 2}, 2.0);
  a.track_grad = true;
  Graph g;
  g.backward(sum(mul(g.parameter(a), g.parameter(b))));
  EXPECT_TRUE(a.has_grad());
  EXPECT_FALSE(b.has_grad());
}

TEST(AutodiffTest, ParameterValueIsCopiedAtBind) {
  Tensor a({1}, 3.0);
  Graph g;
  const Var v = g.parameter(a);
  a[0] = 10.0;
  EXPECT_EQ(v.item(), 3.0);
}

TEST(AutodiffTest, ScalingTheLossScalesEveryGradient) {
  Rng rng(6);
  Tensor w = random_tensor({4, 3}, rng);
  const Tensor x = random_tensor({5, 4}, rng);
  const std::size_t labels[] = {0, 1, 2, 1, 0};
  w.track_grad = true;
  auto grads = [&](double c) {
    w.zero_grad();
    Graph g;
    g.backward(scale(softmax_cross_entropy(matmul(g.constant(x), g.parameter(w)), labels, 0.1), c));
    return w.grad;
  };
  const auto g1 = grads(1.0);
  const auto g3 = grads(3.0);
  for (std::size_t i = 0; i < g1.size(); ++i) EXPECT_NEAR(g3[i], 3.0 * g1[i], 1e-15);
}

TEST(AutodiffTest, FiniteDifferenceSuite) {
  for (const std::uint64_t seed : {0u, 1u}) {
    for (const GradCheckResult& r : gradcheck_suite(seed)) {
      EXPECT_LT(r.max_rel_error, 1e-6) << r.name << " point " << r.point;
    }
  }
}

TEST(AutodiffTest, FiniteDifferenceRestoresParameters) {
  Rng rng(7);
  Tensor a = random_tensor({2, 2}, rng);
  const Tensor before = a;
  Tensor* params[] = {&a};
  finite_diff_check([&](Graph& g) { return sum(relu(g.parameter(a))); }, params);
  EXPECT_EQ(a.values, before.values);
  EXPECT_FALSE(a.track_grad);
  EXPECT_FALSE(a.has_grad());
}

TEST(AutodiffTest, FiniteDifferenceDetectsWrongGradient) {
  // A node whose recorded backward is off by a factor of two.
  const Tensor theta({3}, 0.7);
  const double err = finite_diff_check(
      [](Graph& g, Var x) {
        const std::size_t id = x.id();
        const Var y = g.record(g.value(id), {id}, [id](Graph& graph, const std::vector<double>& adj) {
          auto& in = graph.adjoint(id);
          for (std::size_t i = 0; i < adj.size(); ++i) in[i] += 2.0 * adj[i];
        });
        return sum(y);
      },
      theta);
  EXPECT_NEAR(err, 1.0, 1e-6);
}

}  // namespace
}  // namespace sft
