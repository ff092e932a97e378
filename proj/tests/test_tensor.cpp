#include <gtest/gtest.h>

#include <cmath>

#include "fox/tensor.hpp"

namespace {

using fox::Matrix;
using fox::Vector;

TEST(Matmul, MultipliesAndRejectsBadShapes) {
  Matrix<double> a(2, 3), b(3, 2);
  a << 1, 2, 3, 4, 5, 6;
  b << 1, 0, 0, 1, 1, 1;
  Matrix<double> expect(2, 2);
  expect << 4, 5, 10, 11;
  EXPECT_EQ(fox::matmul(a, b), expect);
  EXPECT_EQ(fox::matmul(a, Matrix<double>(b.transpose()), true), expect);
  EXPECT_THROW(fox::matmul(a, a), fox::ShapeError);
}

TEST(RowSoftmax, MasksToExactZeroAndRowsSumToOne) {
  Matrix<double> s(2, 3);
  s << 0.0, fox::kNegInf<double>, 1.0, 2.0, 2.0, 2.0;
  const Matrix<double> p = fox::row_softmax(s);
  EXPECT_EQ(p(0, 1), 0.0);
  EXPECT_NEAR(p(0, 0), 1.0 / (1.0 + std::exp(1.0)), 1e-15);
  EXPECT_NEAR(p.row(1).sum(), 1.0, 1e-15);
  EXPECT_NEAR(p(1, 2), 1.0 / 3.0, 1e-15);
}

TEST(RowSoftmax, LargeLogitsStayFinite) {
  Matrix<float> s(1, 2);
  s << 1000.0f, 999.0f;
  const Matrix<float> p = fox::row_softmax(s);
  EXPECT_TRUE(p.allFinite());
  EXPECT_NEAR(p(0, 0), 1.0 / (1.0 + std::exp(-1.0)), 1e-6);
}

TEST(RowSoftmax, FullyMaskedRowIsAnError) {
  Matrix<double> s = Matrix<double>::Constant(2, 2, fox::kNegInf<double>);
  s(0, 0) = 0.0;
  EXPECT_THROW(fox::row_softmax(s), fox::DegenerateRowError);
  EXPECT_THROW(fox::row_softmax(s), fox::DomainError);
}

TEST(RmsNorm, UnitRmsOutput) {
  Vector<double> x(4), g = Vector<double>::Ones(4);
  x << 1, -2, 3, -4;
  const Vector<double> y = fox::rmsnorm<double>(x, g, 0.0);
  EXPECT_NEAR(std::sqrt(y.squaredNorm() / 4.0), 1.0, 1e-15);
  EXPECT_NEAR(y[0], 1.0 / std::sqrt(7.5), 1e-15);
  EXPECT_THROW(fox::rmsnorm<double>(x, Vector<double>::Ones(3), 1e-6), fox::ShapeError);
}

TEST(RmsNorm, ZeroInputStaysZero) {
  const Vector<double> y = fox::rmsnorm<double>(Vector<double>::Zero(3), Vector<double>::Ones(3), 1e-6);
  EXPECT_TRUE(y.isZero(0.0));
}

TEST(RmsNorm, SegmentsNormaliseIndependently) {
  Matrix<double> x(1, 4), g(2, 2);
  x << 1, 1, 10, -10;
  g << 1, 1, 2, 2;
  const Matrix<double> y = fox::rmsnorm_segments<double>(x, g, 0.0);
  EXPECT_NEAR(y(0, 0), 1.0, 1e-15);
  EXPECT_NEAR(y(0, 2), 2.0, 1e-15);
  EXPECT_NEAR(y(0, 3), -2.0, 1e-15);
}

TEST(Cumsum, ForwardAndReverse) {
  Vector<double> v(4);
  v << 1, 2, 3, 4;
  Vector<double> fwd(4), rev(4);
  fwd << 1, 3, 6, 10;
  rev << 10, 9, 7, 4;
  EXPECT_EQ(fox::cumsum_fwd(v), fwd);
  EXPECT_EQ(fox::cumsum_rev(v), rev);
}

TEST(Cumsum, FloatInputAccumulatesInDouble) {
  Vector<float> v = Vector<float>::Constant(1 << 20, 0.1f);
  const Eigen::VectorXd c = fox::cumsum_fwd_f64(v);
  EXPECT_NEAR(c[c.size() - 1], static_cast<double>(0.1f) * (1 << 20), 1e-6);
}

TEST(Scalars, SigmoidSoftplusLogSigmoid) {
  EXPECT_DOUBLE_EQ(fox::sigmoid(0.0), 0.5);
  EXPECT_NEAR(fox::sigmoid(-800.0), 0.0, 1e-300);
  EXPECT_TRUE(std::isfinite(fox::sigmoid(-800.0)));
  EXPECT_NEAR(fox::softplus(0.0), std::log(2.0), 1e-15);
  EXPECT_NEAR(fox::softplus(50.0), 50.0, 1e-15);
  // No log(0): stays accurate deep in the tail.
  EXPECT_NEAR(fox::log_sigmoid(-100.0), -100.0, 1e-12);
  EXPECT_NEAR(fox::log_sigmoid(40.0), -std::exp(-40.0), 1e-30);
  EXPECT_LE(fox::log_sigmoid(30.0f), 0.0f);
}

}  // namespace
