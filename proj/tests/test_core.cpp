#include <gtest/gtest.h>

#include "facesr/autodiff.hpp"
#include "facesr/ops.hpp"
#include "facesr/rng.hpp"
#include "testutil.hpp"

using namespace facesr;
using testutil::max_grad_rel_err;
using testutil::random_tensor;

namespace {

TEST(Tensor, ShapeAndAccess) {
  Tensor t({2, 3, 4});
  EXPECT_EQ(t.numel(), 24);
  t.at(1, 2, 3) = 7.0;
  EXPECT_DOUBLE_EQ(t.v[23], 7.0);
  EXPECT_THROW(Tensor({0, 2}), std::invalid_argument);
  EXPECT_THROW(Tensor({2}, {1.0, 2.0, 3.0}), std::invalid_argument);
}

TEST(Rng, DeterministicAndSerializable) {
  Pcg32 a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u32(), b.next_u32());
  const uint64_t st = a.state_word(), inc = a.inc_word();
  const double x = a.next_gaussian();
  Pcg32 c;
  c.restore(st, inc);
  EXPECT_EQ(c.next_gaussian(), x);
}

TEST(Autodiff, SimpleChain) {
  // y = mean((2a + b)^2), hand-checkable.
  Var a = make_param(Tensor({2}, {1.0, -2.0}));
  Var b = make_param(Tensor({2}, {0.5, 1.0}));
  Var y = mean_all(square(add(scale(a, 2.0), b)));
  backward(y);
  // d/da_i = 2 * (2a_i + b_i) * 2 / n
  EXPECT_NEAR(a->grad.v[0], 2.0 * 2.5 * 2.0 / 2.0, 1e-12);
  EXPECT_NEAR(b->grad.v[1], 2.0 * -3.0 / 2.0, 1e-12);
}

TEST(Autodiff, DetachBlocksGradient) {
  Var a = make_param(Tensor({3}, {1.0, 2.0, 3.0}));
  Var y = mean_all(square(detach(scale(a, 2.0))));
  EXPECT_FALSE(y->needs_grad);
  backward(y);  // no-op
  for (double g : a->grad.v) EXPECT_EQ(g, 0.0);
}

TEST(Autodiff, GradAccumulatesAcrossBackwards) {
  Var a = make_param(Tensor({1}, {3.0}));
  backward(square(a));
  backward(square(a));
  EXPECT_DOUBLE_EQ(a->grad.v[0], 12.0);  // 2*3 twice
}

TEST(OpGrad, Elementwise) {
  Pcg32 rng(1);
  Var a = make_param(random_tensor({2, 3, 3}, rng));
  Var b = make_param(random_tensor({2, 3, 3}, rng));
  auto build = [&] { return mean_all(mul(add(square(a), b), sub(a, scale(b, 0.7)))); };
  EXPECT_LT(max_grad_rel_err({a, b}, build), 1e-6);
}

TEST(OpGrad, AbsAndScalarOps) {
  Pcg32 rng(2);
  Var a = make_param(random_tensor({8}, rng));
  auto build = [&] { return sum_all(abs_(add_scalar(a, 0.3))); };
  EXPECT_LT(max_grad_rel_err({a}, build), 1e-6);
}

TEST(OpGrad, Activations) {
  Pcg32 rng(3);
  Var a = make_param(random_tensor({2, 4, 4}, rng, -2.0, 2.0));
  EXPECT_LT(max_grad_rel_err({a}, [&] { return mean_all(smooth_leaky(a, 0.2)); }), 1e-6);
  EXPECT_LT(max_grad_rel_err({a}, [&] { return mean_all(tanh01(scale(a, 1.3))); }), 1e-6);
  // Kinked activations: random inputs stay away from 0 under h=1e-5.
  EXPECT_LT(max_grad_rel_err({a}, [&] { return mean_all(leaky_relu(a, 0.2)); }), 1e-6);
  EXPECT_LT(max_grad_rel_err({a}, [&] { return mean_all(relu(a)); }), 1e-6);
}

TEST(OpGrad, Tanh01Range) {
  Pcg32 rng(4);
  Var a = make_const(random_tensor({1, 4, 4}, rng, -50.0, 50.0));
  Var y = tanh01(a);
  for (double v : y->val.v) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(OpGrad, ConcatAndMask) {
  Pcg32 rng(5);
  Var a = make_param(random_tensor({2, 3, 3}, rng));
  Var b = make_param(random_tensor({1, 3, 3}, rng));
  Tensor mask({1, 3, 3});
  for (int i = 0; i < 9; ++i) mask.v[i] = (i % 2) ? 1.0 : 0.0;
  auto build = [&] { return mean_all(mul_mask(concat_ch({a, b}), mask)); };
  EXPECT_LT(max_grad_rel_err({a, b}, build), 1e-6);
}

TEST(OpGrad, Conv2dStride1) {
  Pcg32 rng(6);
  Var x = make_param(random_tensor({3, 6, 6}, rng));
  Var w = make_param(random_tensor({4, 3, 3, 3}, rng, -0.5, 0.5));
  Var b = make_param(random_tensor({4}, rng, -0.1, 0.1));
  auto build = [&] { return mean_all(conv2d(x, w, b, 1, 1)); };
  EXPECT_LT(max_grad_rel_err({x, w, b}, build), 1e-6);
  EXPECT_EQ(conv2d(x, w, b, 1, 1)->val.shape, (std::vector<int>{4, 6, 6}));
}

TEST(OpGrad, Conv2dStride2) {
  Pcg32 rng(7);
  Var x = make_param(random_tensor({2, 8, 8}, rng));
  Var w = make_param(random_tensor({3, 2, 4, 4}, rng, -0.5, 0.5));
  Var b = make_param(random_tensor({3}, rng, -0.1, 0.1));
  auto build = [&] { return mean_all(square(conv2d(x, w, b, 2, 1))); };
  EXPECT_LT(max_grad_rel_err({x, w, b}, build), 1e-6);
  EXPECT_EQ(conv2d(x, w, b, 2, 1)->val.shape, (std::vector<int>{3, 4, 4}));
}

TEST(OpGrad, ConvTranspose2d) {
  Pcg32 rng(8);
  Var x = make_param(random_tensor({3, 4, 4}, rng));
  Var w = make_param(random_tensor({3, 2, 4, 4}, rng, -0.5, 0.5));
  Var b = make_param(random_tensor({2}, rng, -0.1, 0.1));
  auto build = [&] { return mean_all(square(conv_transpose2d(x, w, b, 2, 1))); };
  EXPECT_LT(max_grad_rel_err({x, w, b}, build), 1e-6);
  EXPECT_EQ(conv_transpose2d(x, w, b, 2, 1)->val.shape, (std::vector<int>{2, 8, 8}));
}

TEST(OpGrad, ConvTransposeMatchesScatterOracle) {
  // Independent naive scatter implementation as oracle for the GEMM path.
  Pcg32 rng(9);
  Tensor x = random_tensor({2, 3, 3}, rng);
  Tensor w = random_tensor({2, 3, 4, 4}, rng);
  Tensor b = random_tensor({3}, rng);
  const int stride = 2, pad = 1;
  const int oh = (3 - 1) * stride - 2 * pad + 4;
  Tensor expect({3, oh, oh});
  for (int o = 0; o < 3; ++o)
    for (int i = 0; i < oh * oh; ++i) expect.v[o * oh * oh + i] = b.v[o];
  for (int ic = 0; ic < 2; ++ic)
    for (int iy = 0; iy < 3; ++iy)
      for (int ix = 0; ix < 3; ++ix)
        for (int oc = 0; oc < 3; ++oc)
          for (int ky = 0; ky < 4; ++ky)
            for (int kx = 0; kx < 4; ++kx) {
              int oy = iy * stride - pad + ky, ox = ix * stride - pad + kx;
              if (oy < 0 || oy >= oh || ox < 0 || ox >= oh) continue;
              expect.at(oc, oy, ox) += x.at(ic, iy, ix) * w.v[((ic * 3 + oc) * 4 + ky) * 4 + kx];
            }
  Var y = conv_transpose2d(make_const(x), make_const(w), make_const(b), stride, pad);
  for (int i = 0; i < expect.numel(); ++i) EXPECT_NEAR(y->val.v[i], expect.v[i], 1e-12);
}

TEST(OpGrad, Conv2dMatchesNaiveOracle) {
  Pcg32 rng(10);
  Tensor x = random_tensor({3, 5, 5}, rng);
  Tensor w = random_tensor({2, 3, 3, 3}, rng);
  Tensor b = random_tensor({2}, rng);
  const int stride = 2, pad = 1;
  const int oh = (5 + 2 * pad - 3) / stride + 1;
  Tensor expect({2, oh, oh});
  for (int oc = 0; oc < 2; ++oc)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < oh; ++ox) {
        double s = b.v[oc];
        for (int ic = 0; ic < 3; ++ic)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              int iy = oy * stride - pad + ky, ix = ox * stride - pad + kx;
              if (iy < 0 || iy >= 5 || ix < 0 || ix >= 5) continue;
              s += x.at(ic, iy, ix) * w.v[((oc * 3 + ic) * 3 + ky) * 3 + kx];
            }
        expect.at(oc, oy, ox) = s;
      }
  Var y = conv2d(make_const(x), make_const(w), make_const(b), stride, pad);
  for (int i = 0; i < expect.numel(); ++i) EXPECT_NEAR(y->val.v[i], expect.v[i], 1e-12);
}

TEST(OpGrad, InstanceNorm) {
  Pcg32 rng(11);
  Var x = make_param(random_tensor({3, 4, 4}, rng));
  Var g = make_param(random_tensor({3}, rng, 0.5, 1.5));
  Var b = make_param(random_tensor({3}, rng, -0.5, 0.5));
  auto build = [&] { return mean_all(square(instance_norm(x, g, b))); };
  EXPECT_LT(max_grad_rel_err({x, g, b}, build), 1e-5);
}

TEST(OpGrad, InstanceNormConstantChannel) {
  // Zero-variance channel normalizes to beta.
  Var x = make_const(Tensor::full({1, 3, 3}, 0.7));
  Var g = make_const(Tensor({1}, {2.0}));
  Var b = make_const(Tensor({1}, {0.25}));
  Var y = instance_norm(x, g, b);
  for (double v : y->val.v) EXPECT_NEAR(v, 0.25, 1e-12);
}

TEST(OpGrad, Pooling) {
  Pcg32 rng(12);
  Var x = make_param(random_tensor({2, 6, 6}, rng));
  EXPECT_LT(max_grad_rel_err({x}, [&] { return mean_all(square(avg_pool2(x))); }), 1e-6);
  EXPECT_LT(max_grad_rel_err({x}, [&] { return mean_all(square(max_pool2(x))); }), 1e-6);
  EXPECT_EQ(avg_pool2(x)->val.shape, (std::vector<int>{2, 3, 3}));
}

TEST(OpGrad, ConvDeterminism) {
  Pcg32 rng(13);
  Var x = make_const(random_tensor({3, 16, 16}, rng));
  Var w = make_const(random_tensor({8, 3, 4, 4}, rng));
  Var b = make_const(random_tensor({8}, rng));
  Var y1 = conv2d(x, w, b, 2, 1);
  Var y2 = conv2d(x, w, b, 2, 1);
  EXPECT_EQ(y1->val.v, y2->val.v);
}

TEST(OpGrad, ShapeErrors) {
  Var x = make_const(Tensor({3, 8, 8}));
  Var w = make_const(Tensor({4, 2, 3, 3}));
  Var b = make_const(Tensor({4}));
  EXPECT_THROW(conv2d(x, w, b, 1, 1), std::invalid_argument);
  EXPECT_THROW(concat_ch({x, make_const(Tensor({1, 4, 4}))}), std::invalid_argument);
  EXPECT_THROW(add(x, make_const(Tensor({3, 4, 4}))), std::invalid_argument);
}

}  // namespace
