#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "clinembed/error.hpp"
#include "clinembed/tensor.hpp"

using namespace clinembed;

TEST(Tensor, ShapeAndSize) {
  Tensor t({2, 3, 4});
  EXPECT_EQ(t.rank(), 3u);
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(t.dim(2), 4u);
  for (double v : t.values()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(shape_string(t.shape()), "[2x3x4]");
}

TEST(Tensor, ValueCountMustMatchShape) {
  EXPECT_THROW(Tensor({2, 2}, {1.0, 2.0, 3.0}), ShapeError);
}

TEST(Tensor, MatrixAccessIsRowMajor) {
  Tensor m = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
  EXPECT_EQ(m.at(1, 0), 4.0);
  EXPECT_EQ(m[5], 6.0);
  EXPECT_EQ(m.row(1)[2], 6.0);
  m.at(0, 1) = 9.0;
  EXPECT_EQ(m[1], 9.0);
}

TEST(Tensor, RaggedMatrixRejected) {
  EXPECT_THROW(Tensor::matrix({{1, 2}, {3}}), ShapeError);
}

TEST(Tensor, AllFinite) {
  Tensor t = Tensor::vector({1.0, -2.0, 1e300});
  EXPECT_TRUE(t.all_finite());
  t[1] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_FALSE(t.all_finite());
  t[1] = -std::numeric_limits<double>::infinity();
  EXPECT_FALSE(t.all_finite());
  t[1] = std::numeric_limits<double>::denorm_min();
  EXPECT_TRUE(t.all_finite());
}

TEST(Tensor, EqualityComparesShapeAndValues) {
  EXPECT_EQ(Tensor::full({2}, 1.5), Tensor::vector({1.5, 1.5}));
  EXPECT_NE(Tensor::zeros({2, 1}), Tensor::zeros({1, 2}));
}
