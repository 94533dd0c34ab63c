#include "sft/tensor.hpp"

#include <cmath>
#include <limits>

#include "gtest/gtest.h"
#include "sft/errors.hpp"

namespace sft {
namespace {

TEST(TensorTest, ShapeAndFill) {
  const Tensor t({2, 3, 4}, 1.5);
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(t.rank(), 3u);
  EXPECT_EQ(t.dim(1), 3u);
  EXPECT_FALSE(t.has_grad());
  for (const double v : t.values) EXPECT_EQ(v, 1.5);
  EXPECT_EQ(shape_str(t.shape), "[2x3x4]");
  EXPECT_EQ(numel({5, 7}), 35u);
}

TEST(TensorTest, RejectsInvalidShapes) {
  EXPECT_THROW(Tensor(Shape{}), DimensionError);
  EXPECT_THROW(Tensor(Shape{2, 0}), DimensionError);
  EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
}

TEST(TensorTest, MatrixIsRowMajor) {
  const Tensor m = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
  EXPECT_EQ(m.shape, (Shape{2, 3}));
  EXPECT_EQ(m[4], 5.0);
  EXPECT_THROW(Tensor::matrix({{1, 2}, {3}}), DimensionError);
}

TEST(TensorTest, ZeroGradAllocatesAndClears) {
  Tensor t({3}, 1.0);
  t.zero_grad();
  ASSERT_TRUE(t.has_grad());
  t.grad[1] = 4.0;
  t.zero_grad();
  EXPECT_EQ(t.grad, (std::vector<double>{0, 0, 0}));
}

TEST(TensorTest, FiniteCheck) {
  Tensor t({2}, 0.0);
  EXPECT_TRUE(t.all_finite());
  t[1] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_FALSE(t.all_finite());
  t[1] = INFINITY;
  EXPECT_FALSE(t.all_finite());
}

}  // namespace
}  // namespace sft
