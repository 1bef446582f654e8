#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "neurocap/autodiff/gradcheck.hpp"
#include "neurocap/autodiff/ops.hpp"
#include "neurocap/error.hpp"
#include "neurocap/rng.hpp"

using namespace neurocap;

namespace {

Tensor random_tensor(Rng& rng, Shape shape, double scale = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.normal(0.0, scale);
  return Tensor::from(std::move(shape), std::move(v));
}

// Plain triple loop; independent of the Eigen-backed kernel.
std::vector<double> naive_matmul(const Tensor& a, const Tensor& b) {
  std::vector<double> out(a.rows() * b.cols(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j)
      for (std::size_t k = 0; k < a.cols(); ++k) out[i * b.cols() + j] += a.at(i, k) * b.at(k, j);
  return out;
}

class TapeTest : public ::testing::Test {
 protected:
  void SetUp() override { tape::reset(); }
};

}  // namespace

TEST_F(TapeTest, MatmulHandExample) {
  Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor b = Tensor::from({2, 2}, {5, 6, 7, 8});
  Tensor c = ops::matmul(a, b);
  EXPECT_EQ(std::vector<double>(c.data().begin(), c.data().end()), (std::vector<double>{19, 22, 43, 50}));
}

TEST_F(TapeTest, MatmulIdentityAndZero) {
  Rng rng(1);
  Tensor a = random_tensor(rng, {3, 4});
  Tensor id = ops::matmul(a, Tensor::eye(4));
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(id.data()[i], a.data()[i]);
  Tensor z = ops::matmul(a, Tensor::zeros({4, 2}));
  for (double v : z.data()) EXPECT_EQ(v, 0.0);
}

TEST_F(TapeTest, MatmulMatchesNaiveProduct) {
  Rng rng(2);
  Tensor a = random_tensor(rng, {7, 5});
  Tensor b = random_tensor(rng, {5, 9});
  Tensor c = ops::matmul(a, b);
  auto ref = naive_matmul(a, b);
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(c.data()[i], ref[i], 1e-12);
}

TEST_F(TapeTest, MatmulShapeMismatchNamesBothShapes) {
  try {
    ops::matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("[2x3] x [2x3]"), std::string::npos) << e.what();
  }
}

TEST_F(TapeTest, SoftmaxTwoElementOracle) {
  Tensor y = ops::softmax(Tensor::from({1, 2}, {0.0, 1.0}), 1);
  const double e = std::numbers::e;
  EXPECT_NEAR(y.data()[0], 1.0 / (1.0 + e), 1e-15);
  EXPECT_NEAR(y.data()[1], e / (1.0 + e), 1e-15);
  EXPECT_NEAR(y.data()[0], 0.2689, 1e-4);
}

TEST_F(TapeTest, SoftmaxConstantRowIsUniformAndShiftInvariant) {
  Tensor u = ops::softmax(Tensor::full({2, 5}, 3.7), 1);
  for (double v : u.data()) EXPECT_NEAR(v, 0.2, 1e-15);

  Rng rng(3);
  Tensor x = random_tensor(rng, {4, 6});
  Tensor a = ops::softmax(x, 1);
  Tensor b = ops::softmax(ops::add_scalar(x, 123.25), 1);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a.data()[i], b.data()[i], 1e-14);
}

TEST_F(TapeTest, SoftmaxRowsSumToOneOnEitherAxis) {
  Rng rng(4);
  Tensor x = random_tensor(rng, {5, 7}, 10.0);
  for (std::size_t axis : {0u, 1u}) {
    Tensor y = ops::softmax(x, axis);
    const std::size_t outer = axis == 1 ? 5 : 7, extent = axis == 1 ? 7 : 5;
    for (std::size_t o = 0; o < outer; ++o) {
      double s = 0.0;
      for (std::size_t k = 0; k < extent; ++k) s += axis == 1 ? y.at(o, k) : y.at(k, o);
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
  EXPECT_THROW(ops::softmax(x, 2), DimensionError);
}

TEST_F(TapeTest, LayerNormExamples) {
  Tensor gamma = Tensor::full({3}, 1.0), beta = Tensor::zeros({3});
  Tensor y = ops::layer_norm(Tensor::from({1, 3}, {1, 2, 3}), gamma, beta, 1e-12);
  EXPECT_NEAR(y.data()[0], -std::sqrt(1.5), 1e-9);
  EXPECT_NEAR(y.data()[1], 0.0, 1e-12);
  EXPECT_NEAR(y.data()[2], 1.2247, 1e-4);

  Tensor c = ops::layer_norm(Tensor::full({2, 3}, 4.0), gamma, beta, 1e-5);
  for (double v : c.data()) EXPECT_EQ(v, 0.0);

  Tensor b2 = Tensor::from({3}, {0.5, -1.0, 2.0});
  Tensor g0 = ops::layer_norm(Tensor::from({2, 3}, {1, 5, 2, 0, 3, 9}), Tensor::zeros({3}), b2, 1e-5);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(g0.data()[i], b2.data()[i % 3]);

  EXPECT_THROW(ops::layer_norm(y, gamma, beta, 0.0), ParameterError);
}

TEST_F(TapeTest, LayerNormNormalizesRows) {
  Rng rng(5);
  Tensor x = random_tensor(rng, {6, 16}, 3.0);
  Tensor y = ops::layer_norm(x, Tensor::full({16}, 1.0), Tensor::zeros({16}), 1e-12);
  for (std::size_t r = 0; r < 6; ++r) {
    double m = 0.0, v = 0.0;
    for (std::size_t c = 0; c < 16; ++c) m += y.at(r, c);
    m /= 16;
    for (std::size_t c = 0; c < 16; ++c) v += (y.at(r, c) - m) * (y.at(r, c) - m);
    EXPECT_NEAR(m, 0.0, 1e-5);
    EXPECT_NEAR(v / 16, 1.0, 1e-5);
  }
}

TEST_F(TapeTest, CrossEntropyExamples) {
  std::vector<std::int64_t> t16(3, 5);
  Tensor uniform = Tensor::zeros({3, 16});
  EXPECT_NEAR(ops::cross_entropy(uniform, t16).item(), std::log(16.0), 1e-12);

  std::vector<std::int64_t> t0{0};
  const double expect = -std::log(std::exp(2.0) / (std::exp(2.0) + 2.0));
  EXPECT_NEAR(ops::cross_entropy(Tensor::from({1, 3}, {2, 0, 0}), t0).item(), expect, 1e-12);
  EXPECT_NEAR(expect, 0.2395, 1e-4);

  std::vector<std::int64_t> all_pad{0, 0};
  EXPECT_THROW(ops::cross_entropy(Tensor::zeros({2, 4}), all_pad, 0), ContractError);
  std::vector<std::int64_t> bad{4};
  EXPECT_THROW(ops::cross_entropy(Tensor::zeros({1, 4}), bad), IndexError);
}

TEST_F(TapeTest, CrossEntropyIgnoredRowsGetNoGradient) {
  Rng rng(6);
  Tensor logits = random_tensor(rng, {3, 5}).set_requires_grad(true);
  std::vector<std::int64_t> targets{2, 0, 4};
  backward(ops::cross_entropy(logits, targets, 0));
  for (std::size_t c = 0; c < 5; ++c) EXPECT_EQ(logits.grad()[5 + c], 0.0);
}

TEST_F(TapeTest, MseMaskedExamples) {
  Tensor p = Tensor::from({2, 1}, {1, 2});
  Tensor t = Tensor::zeros({2, 1});
  EXPECT_DOUBLE_EQ(ops::mse_masked(p, t, {true, true}).item(), 2.5);
  EXPECT_DOUBLE_EQ(ops::mse_masked(p, p, {true, true}).item(), 0.0);
  Tensor shifted = Tensor::from({2, 1}, {1.5, 2});
  EXPECT_DOUBLE_EQ(ops::mse_masked(shifted, p, {true, false}).item(), 0.25);
  EXPECT_THROW(ops::mse_masked(p, t, {false, false}), ContractError);
}

TEST_F(TapeTest, BackwardSumGivesOnes) {
  Tensor x = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  backward(ops::sum(x));
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST_F(TapeTest, BackwardSquareAtThree) {
  Tensor x = Tensor::scalar(3.0, true);
  backward(ops::mul(x, x));
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
}

TEST_F(TapeTest, LeafOffTapeHasNoGradient) {
  Tensor used = Tensor::from({2}, {1, 2}, true);
  Tensor unused = Tensor::from({2}, {3, 4}, true);
  backward(ops::sum(used));
  EXPECT_TRUE(used.has_grad());
  EXPECT_FALSE(unused.has_grad());
}

TEST_F(TapeTest, BackwardContractErrors) {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  EXPECT_THROW(backward(ops::scale(x, 2.0)), ContractError);
  Tensor loss = ops::sum(x);
  backward(loss);
  EXPECT_THROW(backward(loss), ContractError);
  {
    NoGradGuard guard;
    Tensor l2 = ops::sum(x);
    EXPECT_THROW(backward(l2), ContractError);
  }
}

TEST_F(TapeTest, TapeRecordsInOrderAndOnlyWhenNeeded) {
  Tensor a = Tensor::from({2}, {1, 2}, true);
  Tensor c = Tensor::from({2}, {3, 4});
  ops::add(c, c);
  EXPECT_EQ(tape::size(), 0u);
  Tensor s = ops::sum(ops::mul(a, c));
  EXPECT_EQ(tape::op_names(), (std::vector<std::string>{"mul", "sum"}));
  backward(s);
  EXPECT_EQ(tape::size(), 0u);
}

TEST_F(TapeTest, NonFiniteValuesAreSurfaced) {
  Tensor x = Tensor::from({1}, {800.0});
  EXPECT_THROW(ops::exp(x), NumericError);
  EXPECT_THROW(Tensor::from({1}, {std::nan("")}), NumericError);
}

TEST_F(TapeTest, GradientIsLinearInTheLoss) {
  Rng rng(7);
  Tensor x = random_tensor(rng, {3, 4}).set_requires_grad(true);
  Tensor w = random_tensor(rng, {4, 2});
  auto loss1 = [&] { return ops::sum(ops::square(ops::matmul(x, w))); };
  auto loss2 = [&] { return ops::mean(ops::tanh(x)); };

  backward(ops::add(loss1(), loss2()));
  std::vector<double> joint(x.grad().begin(), x.grad().end());
  x.clear_grad();
  backward(loss1());
  backward(loss2());
  for (std::size_t i = 0; i < joint.size(); ++i) EXPECT_NEAR(joint[i], x.grad()[i], 1e-10);
}

// ---------------------------------------------------------------------------
// Finite-difference checks, one per differentiable op.
// ---------------------------------------------------------------------------

class OpGradCheck : public TapeTest {
 protected:
  Rng rng{11};
  Tensor r(Shape s, double scale = 1.0) { return random_tensor(rng, std::move(s), scale); }
  // Random projection so the scalar loss sees every output element.
  // Weights depend only on the shape, so repeated evaluations see one function.
  static Tensor probe(const Tensor& y) {
    Rng fixed(99 + y.numel());
    Tensor w = random_tensor(fixed, y.shape());
    return ops::sum(ops::mul(y, w));
  }
  static constexpr double kH = 1e-5;
};

TEST_F(OpGradCheck, ElementwiseOps) {
  Tensor b = r({3, 4});
  EXPECT_LT(finite_diff_check([&](const Tensor& x) { return probe(ops::add(x, b)); }, r({3, 4}), kH), 1e-6);
  EXPECT_LT(finite_diff_check([&](const Tensor& x) { return probe(ops::sub(b, x)); }, r({3, 4}), kH), 1e-6);
  EXPECT_LT(finite_diff_check([&](const Tensor& x) { return probe(ops::mul(x, b)); }, r({3, 4}), kH), 1e-6);
  EXPECT_LT(finite_diff_check([&](const Tensor& x) { return probe(ops::scale(x, -1.7)); }, r({3, 4}), kH), 1e-6);
  EXPECT_LT(finite_diff_check([&](const Tensor& x) { return probe(ops::add_scalar(x, 2.0)); }, r({3, 4}), kH),
            1e-6);
  EXPECT_LT(finite_diff_check([&](const Tensor& x) { return probe(ops::gelu(x)); }, r({3, 4}, 2.0), kH), 1e-6);
  EXPECT_LT(finite_diff_check([&](const Tensor& x) { return probe(ops::tanh(x)); }, r({3, 4}), kH), 1e-6);
  EXPECT_LT(finite_diff_check([&](const Tensor& x) { return probe(ops::exp(x)); }, r({3, 4}), kH), 1e-6);
  EXPECT_LT(finite_diff_check([&](const Tensor& x) { return probe(ops::square(x)); }, r({3, 4}), kH), 1e-6);
}

TEST_F(OpGradCheck, SumOfSquaresAndLinear) {
  EXPECT_LT(finite_diff_check([](const Tensor& x) { return ops::sum(ops::square(x)); }, r({5, 3}), 1e-5), 1e-6);
  const double lin = finite_diff_check([](const Tensor& x) { return ops::sum(ops::scale(x, 3.0)); }, r({4, 4}), 1e-5);
  EXPECT_LT(lin, 1e-9);
}

TEST_F(OpGradCheck, StructuralOps) {
  std::vector<std::size_t> ids{2, 0, 2, 1};
  EXPECT_LT(finite_diff_check([&](const Tensor& x) { return probe(ops::transpose(x)); }, r({3, 5}), kH), 1e-6);
  EXPECT_LT(finite_diff_check([&](const Tensor& x) { return probe(ops::reshape(x, {5, 3})); }, r({3, 5}), kH),
            1e-6);
  EXPECT_LT(finite_diff_check([&](const Tensor& x) { return probe(ops::slice_rows(x, 1, 2)); }, r({4, 3}), kH),
            1e-6);
  EXPECT_LT(finite_diff_check([&](const Tensor& x) { return probe(ops::concat_rows({x, x})); }, r({2, 3}), kH),
            1e-6);
  EXPECT_LT(finite_diff_check([&](const Tensor& x) { return probe(ops::gather_rows(x, ids)); }, r({3, 4}), kH),
            1e-6);
  EXPECT_LT(finite_diff_check([&](const Tensor& x) { return probe(ops::tile_rows(x, 3)); }, r({2, 3}), kH), 1e-6);
  EXPECT_LT(finite_diff_check([&](const Tensor& x) { return probe(ops::mask_rows(x, {true, false, true})); },
                              r({3, 2}), kH),
            1e-6);
  Tensor bias = r({4});
  EXPECT_LT(finite_diff_check([&](const Tensor& x) { return probe(ops::add_bias(x, bias)); }, r({3, 4}), kH),
            1e-6);
  Tensor xin = r({3, 4});
  EXPECT_LT(finite_diff_check([&](const Tensor& b) { return probe(ops::add_bias(xin, b)); }, r({4}), kH), 1e-6);
}

TEST_F(OpGradCheck, MatmulBothOperands) {
  Tensor a = r({4, 3}), b = r({3, 5});
  auto res = gradcheck([&] { return probe(ops::matmul(a, b)); }, {a, b}, kH);
  EXPECT_LT(res.max_rel_error, 1e-6);
}

TEST_F(OpGradCheck, ScalarMultiplyBothOperands) {
  Tensor x = r({3, 3}), s = Tensor::scalar(0.7);
  EXPECT_LT(gradcheck([&] { return probe(ops::mul_scalar(x, s)); }, {x, s}, kH).max_rel_error, 1e-6);
}

TEST_F(OpGradCheck, NormalizationOps) {
  EXPECT_LT(finite_diff_check([&](const Tensor& x) { return probe(ops::softmax(x, 1)); }, r({3, 5}), kH), 1e-4);
  EXPECT_LT(finite_diff_check([&](const Tensor& x) { return probe(ops::softmax(x, 0)); }, r({3, 5}), kH), 1e-4);
  EXPECT_LT(finite_diff_check([&](const Tensor& x) { return probe(ops::log_softmax(x, 1)); }, r({3, 5}), kH),
            1e-4);
  EXPECT_LT(finite_diff_check([&](const Tensor& x) { return probe(ops::l2_normalize_rows(x)); }, r({3, 5}), kH),
            1e-4);
  Tensor x = r({4, 6}, 2.0), g = r({6}), b = r({6});
  EXPECT_LT(gradcheck([&] { return probe(ops::layer_norm(x, g, b, 1e-5)); }, {x, g, b}, kH).max_rel_error, 1e-4);
}

TEST_F(OpGradCheck, Losses) {
  std::vector<std::int64_t> targets{1, 0, 3, 0};
  EXPECT_LT(finite_diff_check([&](const Tensor& x) { return ops::cross_entropy(x, targets, 0); }, r({4, 5}), kH),
            1e-4);
  Tensor target = r({3, 4});
  EXPECT_LT(finite_diff_check([&](const Tensor& x) { return ops::mse_masked(x, target, {true, false, true}); },
                              r({3, 4}), kH),
            1e-6);
  Tensor pred = r({3, 4});
  EXPECT_LT(finite_diff_check([&](const Tensor& t) { return ops::mse_masked(pred, t, {true, false, true}); },
                              r({3, 4}), kH),
            1e-6);
  Tensor w = r({6, 5});
  EXPECT_LT(finite_diff_check(
                [&](const Tensor& x) { return ops::cross_entropy(ops::tanh(ops::matmul(x, w)), targets); },
                r({4, 6}), kH),
            1e-4);
}

TEST_F(OpGradCheck, RejectsBadStep) {
  EXPECT_THROW(finite_diff_check([](const Tensor& x) { return ops::sum(x); }, r({2}), 0.0), ParameterError);
}
