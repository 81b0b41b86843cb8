#include <gtest/gtest.h>

#include "test_util.hpp"
#include "xtransfer/autodiff.hpp"

using namespace xtransfer;
using namespace xtransfer::testing;

namespace {

using Builder = std::function<ad::Var(ad::Tape&, ad::Var)>;

// Weighted sum of the op output, so every output element contributes.
ad::Var project(ad::Tape& t, ad::Var y, std::uint64_t seed) {
  const Tensor w = random_tensor(y.shape(), seed);
  return ad::sum(ad::mul(y, t.constant(w)));
}

void expect_gradient(const Builder& op, const Tensor& x0, double tol = 1e-5, std::uint64_t seed = 7) {
  ad::Tape tape;
  ad::Var x = tape.parameter(x0);
  ad::Var loss = project(tape, op(tape, x), seed);
  tape.backward(loss);
  const Tensor g = x.grad();
  auto f = [&](const Tensor& xv) {
    ad::Tape t;
    return project(t, op(t, t.constant(xv)), seed).value()[0];
  };
  for (std::size_t i = 0; i < x0.size(); ++i) {
    const double fd = central_difference(f, x0, i);
    EXPECT_LT(relative_error(g[i], fd, 1e-4), tol) << "coordinate " << i << ": " << g[i] << " vs " << fd;
  }
}

}  // namespace

TEST(Autodiff, ElementwiseOps) {
  const Tensor x = random_tensor({2, 5}, 1);
  const Tensor other = random_tensor({2, 5}, 2);
  expect_gradient([&](ad::Tape& t, ad::Var v) { return ad::mul(v, t.constant(other)); }, x);
  expect_gradient([&](ad::Tape& t, ad::Var v) { return ad::sub(t.constant(other), v); }, x);
  expect_gradient([](ad::Tape&, ad::Var v) { return ad::affine(v, 3.0, -1.0); }, x);
  expect_gradient([](ad::Tape&, ad::Var v) { return ad::sigmoid(v); }, x);
  expect_gradient([](ad::Tape&, ad::Var v) { return ad::gelu(v); }, x);
  expect_gradient([](ad::Tape&, ad::Var v) { return ad::exp(v); }, x);
  expect_gradient([](ad::Tape&, ad::Var v) { return ad::mul(v, v); }, x);
}

TEST(Autodiff, ScalarMultiplierGradient) {
  const Tensor x = random_tensor({3, 4}, 3);
  expect_gradient([&](ad::Tape& t, ad::Var s) { return ad::mul_scalar(t.constant(x), s); }, Tensor({1}, 0.7));
  expect_gradient([](ad::Tape& t, ad::Var v) { return ad::mul_scalar(v, t.constant(Tensor({1}, -2.5))); }, x);
}

TEST(Autodiff, Reductions) {
  const Tensor x = random_tensor({2, 3, 4}, 4);
  expect_gradient([](ad::Tape&, ad::Var v) { return ad::sum(v); }, x);
  expect_gradient([](ad::Tape&, ad::Var v) { return ad::mean(v); }, x);
  expect_gradient([](ad::Tape&, ad::Var v) { return ad::abs_sum(v); }, x);
  expect_gradient([](ad::Tape&, ad::Var v) { return ad::l2_norm(v); }, x);
  expect_gradient([](ad::Tape&, ad::Var v) { return ad::total_variation(v); }, x);
}

TEST(Autodiff, ForwardValuesMatchDirectArithmetic) {
  const Tensor x = random_tensor({2, 3, 3}, 5);
  ad::Tape t;
  ad::Var v = t.constant(x);
  double s = 0, a = 0, q = 0, tv = 0;
  for (double e : x.values()) {
    s += e;
    a += std::abs(e);
    q += e * e;
  }
  for (std::size_t p = 0; p < 2; ++p) {
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t j = 0; j < 3; ++j) {
        const double c = x[(p * 3 + i) * 3 + j];
        if (i + 1 < 3) tv += std::abs(x[(p * 3 + i + 1) * 3 + j] - c);
        if (j + 1 < 3) tv += std::abs(x[(p * 3 + i) * 3 + j + 1] - c);
      }
    }
  }
  EXPECT_NEAR(ad::sum(v).value()[0], s, 1e-12);
  EXPECT_NEAR(ad::mean(v).value()[0], s / 18.0, 1e-12);
  EXPECT_NEAR(ad::abs_sum(v).value()[0], a, 1e-12);
  EXPECT_NEAR(ad::l2_norm(v).value()[0], std::sqrt(q), 1e-12);
  EXPECT_NEAR(ad::total_variation(v).value()[0], tv, 1e-12);
}

TEST(Autodiff, ShapeOps) {
  const Tensor d = random_tensor({3, 4, 4}, 6);
  const Tensor x = random_tensor({2, 3, 4, 4}, 7, 0.0, 1.0);
  expect_gradient([](ad::Tape&, ad::Var v) { return ad::reshape(v, {6, 16}); }, x);
  expect_gradient([&](ad::Tape& t, ad::Var v) { return ad::add_broadcast(t.constant(x), v); }, d);
  expect_gradient([&](ad::Tape& t, ad::Var v) { return ad::add_broadcast(v, t.constant(d)); }, x);
  expect_gradient([](ad::Tape&, ad::Var v) { return ad::resize_bilinear(v, 7, 5); }, x);
  expect_gradient([](ad::Tape&, ad::Var v) { return ad::resize_bilinear(v, 2, 3); }, x);
}

TEST(Autodiff, PatchBlendGradients) {
  const Tensor x = random_tensor({2, 3, 4, 4}, 8, 0.0, 1.0);
  const Tensor m = random_tensor({4, 4}, 9, -2.0, 2.0);
  const Tensor p = random_tensor({3, 4, 4}, 10, -2.0, 2.0);
  expect_gradient([&](ad::Tape& t, ad::Var v) { return ad::patch_blend(t.constant(x), v, t.constant(p)); }, m);
  expect_gradient([&](ad::Tape& t, ad::Var v) { return ad::patch_blend(t.constant(x), t.constant(m), v); }, p);
  expect_gradient([&](ad::Tape& t, ad::Var v) { return ad::patch_blend(v, t.constant(m), t.constant(p)); }, x);
}

TEST(Autodiff, NetworkOps) {
  const Tensor x = random_tensor({2, 2, 5, 5}, 11);
  const Tensor w = random_tensor({3, 2, 3, 3}, 12);
  const Tensor b = random_tensor({3}, 13);
  expect_gradient([&](ad::Tape& t, ad::Var v) { return ad::conv2d(v, t.constant(w), t.constant(b), 2, 1); }, x);
  expect_gradient([&](ad::Tape& t, ad::Var v) { return ad::conv2d(t.constant(x), v, t.constant(b), 2, 1); }, w);
  expect_gradient([&](ad::Tape& t, ad::Var v) { return ad::conv2d(t.constant(x), t.constant(w), v, 1, 1); }, b);

  const Tensor a = random_tensor({3, 4}, 14);
  const Tensor lw = random_tensor({5, 4}, 15);
  const Tensor lb = random_tensor({5}, 16);
  expect_gradient([&](ad::Tape& t, ad::Var v) { return ad::linear(v, t.constant(lw), t.constant(lb)); }, a);
  expect_gradient([&](ad::Tape& t, ad::Var v) { return ad::linear(t.constant(a), v, t.constant(lb)); }, lw);
  expect_gradient([&](ad::Tape& t, ad::Var v) { return ad::matmul_nt(v, t.constant(lw)); }, a);
  expect_gradient([&](ad::Tape& t, ad::Var v) { return ad::matmul_nt(t.constant(a), v); }, lw);
  expect_gradient([](ad::Tape&, ad::Var v) { return ad::l2_normalize_rows(v); }, a);
  const Tensor a2 = random_tensor({3, 4}, 17);
  expect_gradient([&](ad::Tape& t, ad::Var v) { return ad::row_dot(v, t.constant(a2)); }, a);
  expect_gradient([](ad::Tape&, ad::Var v) { return ad::symmetric_cross_entropy(v); }, random_tensor({4, 4}, 18));
  expect_gradient([](ad::Tape&, ad::Var v) { return ad::embedding_bag_mean(v, {{0, 2}, {1}, {2, 2, 3}}); },
                  random_tensor({4, 3}, 19));
}

TEST(Autodiff, SymmetricCrossEntropyOracle) {
  const Tensor z = random_tensor({3, 3}, 20, -3.0, 3.0);
  ad::Tape t;
  const double got = ad::symmetric_cross_entropy(t.constant(z)).value()[0];
  double row = 0.0, col = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    double rs = 0.0, cs = 0.0;
    for (std::size_t j = 0; j < 3; ++j) {
      rs += std::exp(z[i * 3 + j]);
      cs += std::exp(z[j * 3 + i]);
    }
    row += z[i * 3 + i] - std::log(rs);
    col += z[i * 3 + i] - std::log(cs);
  }
  EXPECT_NEAR(got, -(row + col) / 6.0, 1e-12);
}

TEST(Autodiff, GradientAccumulatesAcrossUses) {
  ad::Tape t;
  ad::Var x = t.parameter(Tensor({2}, std::vector<double>{1.5, -2.0}));
  ad::Var y = ad::sum(ad::add(ad::mul(x, x), ad::scale(x, 3.0)));
  t.backward(y);
  EXPECT_DOUBLE_EQ(x.grad()[0], 2 * 1.5 + 3.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 2 * -2.0 + 3.0);
}

TEST(Autodiff, ConstantsReceiveNoGradient) {
  ad::Tape t;
  ad::Var c = t.constant(Tensor({3}, 2.0));
  ad::Var p = t.parameter(Tensor({3}, 1.0));
  ad::Var y = ad::sum(ad::mul(c, p));
  t.backward(y);
  EXPECT_FALSE(c.requires_grad());
  const Tensor gc = c.grad(), gp = p.grad();
  for (double g : gc.values()) EXPECT_EQ(g, 0.0);
  for (double g : gp.values()) EXPECT_EQ(g, 2.0);
}

TEST(Autodiff, ShapeMismatchThrows) {
  ad::Tape t;
  EXPECT_ANY_THROW(ad::add(t.constant(Tensor({2, 3})), t.constant(Tensor({3, 2}))));
  EXPECT_ANY_THROW(ad::matmul_nt(t.constant(Tensor({2, 3})), t.constant(Tensor({2, 4}))));
}
