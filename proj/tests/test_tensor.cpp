#include <gtest/gtest.h>

#include <thread>

#include "protoseg/numcore/ops.hpp"
#include "protoseg/numcore/tensor.hpp"

using namespace protoseg::num;

TEST(Tensor, ConstructorChecksSize) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), ShapeError);
  Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.rank(), 2u);
  EXPECT_EQ(t[4], 5.0);
  EXPECT_EQ(shape_str(t.shape()), "[2x3]");
}

TEST(Tensor, ItemNeedsSingleElement) {
  EXPECT_EQ(Tensor::scalar(3.5).item(), 3.5);
  EXPECT_THROW(Tensor::zeros({2}).item(), ShapeError);
}

TEST(Tensor, DiamondGraphAccumulates) {
  // y = x*x + x, dy/dx = 2x + 1
  Tensor x = Tensor::scalar(3.0, true);
  Tensor y = add(mul(x, x), x);
  backward(y);
  ASSERT_TRUE(x.has_grad());
  EXPECT_DOUBLE_EQ(x.grad()[0], 7.0);
}

TEST(Tensor, BackwardRejectsNonScalar) {
  Tensor x = Tensor::full({3}, 1.0, true);
  EXPECT_THROW(backward(scale(x, 2.0)), ShapeError);
}

TEST(Tensor, BackwardWithoutGradIsLogicError) {
  Tensor x = Tensor::scalar(1.0);
  EXPECT_THROW(backward(scale(x, 2.0)), std::logic_error);
}

TEST(Tensor, NoGradGuardSkipsGraph) {
  Tensor x = Tensor::scalar(2.0, true);
  Tensor y;
  {
    NoGradGuard guard;
    EXPECT_FALSE(grad_enabled());
    y = mul(x, x);
  }
  EXPECT_TRUE(grad_enabled());
  EXPECT_FALSE(y.requires_grad());
  EXPECT_DOUBLE_EQ(y.item(), 4.0);
}

TEST(Tensor, NoGradGuardIsPerThread) {
  NoGradGuard guard;
  bool other = false;
  std::thread t([&] { other = grad_enabled(); });
  t.join();
  EXPECT_TRUE(other);
  EXPECT_FALSE(grad_enabled());
}

TEST(Tensor, DetachCutsHistory) {
  Tensor x = Tensor::scalar(2.0, true);
  Tensor d = mul(x, x).detach();
  EXPECT_FALSE(d.requires_grad());
  EXPECT_DOUBLE_EQ(d.item(), 4.0);
}

TEST(Tensor, GradientsAccumulateAcrossBackwardCalls) {
  Tensor x = Tensor::scalar(1.5, true);
  backward(scale(x, 2.0));
  backward(scale(x, 3.0));
  EXPECT_DOUBLE_EQ(x.grad()[0], 5.0);
  x.zero_grad();
  EXPECT_FALSE(x.has_grad());
}

TEST(Tensor, FloatVariantWorks) {
  Tensor32 x = Tensor32::scalar(2.0f, true);
  Tensor32 y = mul(x, x);
  backward(y);
  EXPECT_FLOAT_EQ(x.grad()[0], 4.0f);
}
