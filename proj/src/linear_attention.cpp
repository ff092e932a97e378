#include "fox/linear_attention.hpp"

#include <cassert>
#include <cmath>
#include <string>

namespace fox::gla {
namespace {

void check_shapes(const Mat& k, const Mat& q, const Mat& v, Index gates) {
  const Index len = q.rows();
  if (k.rows() != len || v.rows() != len || gates != len) {
    throw ShapeError("gla: q, k, v and f must share the sequence length");
  }
  if (k.cols() != q.cols()) throw ShapeError("gla: q and k feature dims differ");
}

void check_gates(const Vec& f) {
  for (Index t = 0; t < f.size(); ++t) {
    if (!(f[t] > 0.0 && f[t] <= 1.0)) {
      throw DomainError("gla: forget gate f[" + std::to_string(t) + "] outside (0, 1]");
    }
  }
}

}  // namespace

Vec phi_feature(const Vec& x, const FeatureMapSpec&) {
  return x.unaryExpr([](double u) { return u > 0.0 ? u + 1.0 : std::exp(u); });
}

Mat phi_rows(const Mat& x, const FeatureMapSpec&) {
  return x.unaryExpr([](double u) { return u > 0.0 ? u + 1.0 : std::exp(u); });
}

Mat gla_recurrent(const Mat& k, const Mat& q, const Mat& v, const Vec& f,
                  const FeatureMapSpec& spec) {
  check_shapes(k, q, v, f.size());
  check_gates(f);
  const Mat pk = phi_rows(k, spec);
  const Mat pq = phi_rows(q, spec);
  State st{Mat::Zero(v.cols(), pk.cols()), Vec::Zero(pk.cols())};
  Mat out(q.rows(), v.cols());
  for (Index t = 0; t < q.rows(); ++t) {
    st.s = f[t] * st.s + v.row(t).transpose() * pk.row(t);
    st.z = f[t] * st.z + pk.row(t).transpose();
    const double denom = st.z.dot(pq.row(t).transpose());
    assert(denom > 0.0);
    out.row(t) = (st.s * pq.row(t).transpose()).transpose() / denom;
  }
  return out;
}

Mat gla_parallel(const Mat& k, const Mat& q, const Mat& v, const Vec& f,
                 const FeatureMapSpec& spec) {
  check_shapes(k, q, v, f.size());
  check_gates(f);
  const Mat pk = phi_rows(k, spec);
  const Mat pq = phi_rows(q, spec);
  const Vec logf = f.array().log().matrix();
  const Eigen::VectorXd c = cumsum_fwd_f64(logf);
  const Index len = q.rows();

  Mat weights = pq * pk.transpose();
  for (Index i = 0; i < len; ++i) {
    for (Index j = 0; j < len; ++j) weights(i, j) = j > i ? 0.0 : weights(i, j) * std::exp(c[i] - c[j]);
  }
  const Vec denom = weights.rowwise().sum();
  assert((denom.array() > 0.0).all());
  return (weights * v).array().colwise() / denom.array();
}

Mat linear_attention(const Mat& k, const Mat& q, const Mat& v, const FeatureMapSpec& spec) {
  check_shapes(k, q, v, q.rows());
  const Mat pk = phi_rows(k, spec);
  const Mat pq = phi_rows(q, spec);
  Mat out(q.rows(), v.cols());
  for (Index i = 0; i < q.rows(); ++i) {
    Vec num = Vec::Zero(v.cols());
    double den = 0.0;
    for (Index j = 0; j <= i; ++j) {
      const double w = pq.row(i).dot(pk.row(j));
      num += w * v.row(j).transpose();
      den += w;
    }
    out.row(i) = num.transpose() / den;
  }
  return out;
}

}  // namespace fox::gla
