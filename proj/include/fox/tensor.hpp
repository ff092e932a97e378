#ifndef FOX_TENSOR_HPP_
#define FOX_TENSOR_HPP_

// Dense kernel layer shared by every other module. Everything is templated on
// the scalar: float is the working precision, double the oracle precision.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>

#include "fox/errors.hpp"

namespace fox {

using Index = Eigen::Index;

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

// Mask sentinel for pre-softmax logits. It is finite, so products and sums
// never produce NaN, and exp(kNegInf - max) underflows to exactly zero.
template <typename T>
inline constexpr T kNegInf = std::numeric_limits<T>::lowest();

template <typename T>
inline bool is_masked(T x) {
  return x == kNegInf<T>;
}

inline std::string shape_str(Index r, Index c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b, bool transpose_b = false) {
  const Index inner_b = transpose_b ? b.cols() : b.rows();
  if (a.cols() != inner_b) {
    throw ShapeError("matmul: inner dimensions disagree (" + shape_str(a.rows(), a.cols()) +
                     " vs " + shape_str(b.rows(), b.cols()) + (transpose_b ? "^T)" : ")"));
  }
  if (transpose_b) return a * b.transpose();
  return a * b;
}

// Row-wise softmax; kNegInf entries map to exactly zero.
template <typename T>
Matrix<T> row_softmax(const Matrix<T>& logits) {
  Matrix<T> out(logits.rows(), logits.cols());
  for (Index i = 0; i < logits.rows(); ++i) {
    T row_max = kNegInf<T>;
    for (Index j = 0; j < logits.cols(); ++j) {
      if (!is_masked(logits(i, j)) && logits(i, j) > row_max) row_max = logits(i, j);
    }
    bool any = false;
    for (Index j = 0; j < logits.cols(); ++j) any = any || !is_masked(logits(i, j));
    if (!any) throw DegenerateRowError("row_softmax: row " + std::to_string(i) + " is fully masked");
    T sum = 0;
    for (Index j = 0; j < logits.cols(); ++j) {
      const T e = is_masked(logits(i, j)) ? T(0) : std::exp(logits(i, j) - row_max);
      out(i, j) = e;
      sum += e;
    }
    out.row(i) /= sum;
  }
  return out;
}

template <typename T>
Vector<T> rmsnorm(const Vector<T>& x, const Vector<T>& gamma, T eps = T(1e-6)) {
  if (x.size() != gamma.size()) throw ShapeError("rmsnorm: x and gamma lengths differ");
  if (x.size() == 0) return x;
  const T ms = x.squaredNorm() / static_cast<T>(x.size());
  const T inv = T(1) / std::sqrt(ms + eps);
  return (gamma.array() * x.array() * inv).matrix();
}

// X is L x (S*D). Segment s of every row is RMS-normalised on its own and
// scaled by gamma.row(s). S = 1 is the ordinary row-wise RMSNorm.
template <typename T>
Matrix<T> rmsnorm_segments(const Matrix<T>& x, const Matrix<T>& gamma, T eps) {
  const Index segs = gamma.rows(), width = gamma.cols();
  if (x.cols() != segs * width) throw ShapeError("rmsnorm_segments: width mismatch");
  Matrix<T> y(x.rows(), x.cols());
  for (Index t = 0; t < x.rows(); ++t) {
    for (Index s = 0; s < segs; ++s) {
      auto xs = x.row(t).segment(s * width, width);
      const T inv = T(1) / std::sqrt(xs.squaredNorm() / static_cast<T>(width) + eps);
      y.row(t).segment(s * width, width) = (xs.array() * gamma.row(s).array() * inv).matrix();
    }
  }
  return y;
}

// Reverse mode of rmsnorm_segments. dgamma is accumulated into, not assigned.
template <typename T>
Matrix<T> rmsnorm_segments_bwd(const Matrix<T>& x, const Matrix<T>& gamma, T eps,
                               const Matrix<T>& dy, Matrix<T>& dgamma) {
  const Index segs = gamma.rows(), width = gamma.cols();
  Matrix<T> dx(x.rows(), x.cols());
  const T n = static_cast<T>(width);
  for (Index t = 0; t < x.rows(); ++t) {
    for (Index s = 0; s < segs; ++s) {
      auto xs = x.row(t).segment(s * width, width);
      auto gs = dy.row(t).segment(s * width, width);
      const T inv = T(1) / std::sqrt(xs.squaredNorm() / n + eps);
      dgamma.row(s).array() += gs.array() * xs.array() * inv;
      const auto gg = (gs.array() * gamma.row(s).array()).eval();
      const T proj = (gg * xs.array()).sum();
      dx.row(t).segment(s * width, width) =
          (gg * inv - xs.array() * (proj * inv * inv * inv / n)).matrix();
    }
  }
  return dx;
}

// Cumulative sums accumulate in double whatever T is.
template <typename T>
Eigen::VectorXd cumsum_fwd_f64(const Vector<T>& v) {
  Eigen::VectorXd out(v.size());
  double acc = 0.0;
  for (Index i = 0; i < v.size(); ++i) {
    acc += static_cast<double>(v[i]);
    out[i] = acc;
  }
  return out;
}

template <typename T>
Vector<T> cumsum_fwd(const Vector<T>& v) {
  return cumsum_fwd_f64(v).template cast<T>();
}

template <typename T>
Vector<T> cumsum_rev(const Vector<T>& v) {
  Vector<T> out(v.size());
  double acc = 0.0;
  for (Index i = v.size() - 1; i >= 0; --i) {
    acc += static_cast<double>(v[i]);
    out[i] = static_cast<T>(acc);
  }
  return out;
}

template <typename T>
inline T sigmoid(T z) {
  if (z >= 0) return T(1) / (T(1) + std::exp(-z));
  const T e = std::exp(z);
  return e / (T(1) + e);
}

template <typename T>
inline T softplus(T z) {
  return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

// log(sigmoid(z)) = -softplus(-z); never formed as log of a rounded sigmoid.
template <typename T>
inline T log_sigmoid(T z) {
  return -softplus(-z);
}

template <typename T>
inline T silu(T z) {
  return z * sigmoid(z);
}

template <typename Derived>
auto sigmoid(const Eigen::MatrixBase<Derived>& z) {
  using T = typename Derived::Scalar;
  return z.unaryExpr([](T v) { return sigmoid(v); });
}

}  // namespace fox

#endif  // FOX_TENSOR_HPP_
