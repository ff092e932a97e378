#include "fox/attention_ref.hpp"

#include <cmath>
#include <string>

#include "fox/scratch.hpp"

namespace fox {

template <typename T>
void AttentionInputs<T>::validate() const {
  const Index len = q.rows();
  if (k.rows() != len || v.rows() != len || logf.size() != len) {
    throw ShapeError("attention: q, k, v and logf must share the sequence length");
  }
  if (k.cols() != q.cols()) throw ShapeError("attention: q and k head dims differ");
  for (Index t = 0; t < len; ++t) {
    if (!(logf[t] <= T(0))) {
      throw DomainError("attention: logf[" + std::to_string(t) + "] must be <= 0");
    }
  }
}

template <typename T>
DecayBias<T> decay_bias(const Vector<T>& logf) {
  for (Index t = 0; t < logf.size(); ++t) {
    if (!(logf[t] <= T(0))) throw DomainError("decay_bias: positive log forget gate");
  }
  DecayBias<T> out;
  out.c = cumsum_fwd_f64(logf);
  const Index len = logf.size();
  out.d.setConstant(len, len, kNegInf<T>);
  for (Index i = 0; i < len; ++i) {
    for (Index j = 0; j <= i; ++j) out.d(i, j) = decay_entry<T>(out.c, i, j);
  }
  return out;
}

namespace {

// scale * Q K^T + D with the causal mask folded into D.
template <typename T>
Matrix<T> biased_logits(const AttentionInputs<T>& inp, const DecayBias<T>& bias) {
  Matrix<T> s = matmul(inp.q, inp.k, /*transpose_b=*/true);
  const Index len = inp.length();
  for (Index i = 0; i < len; ++i) {
    for (Index j = 0; j < len; ++j) {
      s(i, j) = j > i ? kNegInf<T> : inp.scale * s(i, j) + bias.d(i, j);
    }
  }
  return s;
}

}  // namespace

template <typename T>
RefAttention<T> fgattn_fwd(const AttentionInputs<T>& inp) {
  inp.validate();
  const std::size_t l2 = static_cast<std::size_t>(inp.length()) * inp.length();
  // D, the logits and the probabilities are all L x L.
  scratch::Lease lease(scratch::bytes_of<T>(3 * l2));
  const DecayBias<T> bias = decay_bias(inp.logf);
  RefAttention<T> r;
  r.scores = row_softmax(biased_logits(inp, bias));
  r.out = r.scores * inp.v;
  return r;
}

template <typename T>
AttentionGrads<T> fgattn_bwd(const AttentionInputs<T>& inp, const Matrix<T>& out,
                             const Matrix<T>& dout) {
  inp.validate();
  const Index len = inp.length();
  if (out.rows() != len || dout.rows() != len || out.cols() != inp.v.cols() ||
      dout.cols() != inp.v.cols()) {
    throw ShapeError("fgattn_bwd: O / dO shape does not match the inputs");
  }
  const std::size_t l2 = static_cast<std::size_t>(len) * len;
  scratch::Lease lease(scratch::bytes_of<T>(5 * l2));

  const DecayBias<T> bias = decay_bias(inp.logf);
  const Matrix<T> p = row_softmax(biased_logits(inp, bias));

  const Vector<T> delta = (dout.array() * out.array()).rowwise().sum();
  const Matrix<T> dp = dout * inp.v.transpose();
  const Matrix<T> ds = (p.array() * (dp.colwise() - delta).array()).matrix();

  AttentionGrads<T> g;
  g.dv = p.transpose() * dout;
  g.dq = inp.scale * (ds * inp.k);
  g.dk = inp.scale * (ds.transpose() * inp.q);
  // dc = dc^q + dc^k, then c_i = sum_{l<=i} logf_l gives dlogf = reverse cumsum.
  const Vector<T> dc = ds.rowwise().sum() - ds.colwise().sum().transpose();
  g.dlogf = cumsum_rev(dc);
  return g;
}

double fixed_gate_from_alibi_slope(double slope) {
  if (!(slope >= 0.0)) throw DomainError("ALiBi slope must be non-negative");
  return -slope;
}

template <typename T>
Matrix<T> rope_apply(const Matrix<T>& x, double base_theta, Index start_pos, bool inverse) {
  const Index d = x.cols();
  if (d % 2 != 0) throw ShapeError("rope_apply: head dimension must be even");
  Matrix<T> y(x.rows(), d);
  for (Index t = 0; t < x.rows(); ++t) {
    const double pos = static_cast<double>(start_pos + t);
    for (Index i = 0; i < d / 2; ++i) {
      const double freq = std::pow(base_theta, -2.0 * static_cast<double>(i) / static_cast<double>(d));
      const double angle = inverse ? -pos * freq : pos * freq;
      const T cs = static_cast<T>(std::cos(angle));
      const T sn = static_cast<T>(std::sin(angle));
      const T a = x(t, 2 * i), b = x(t, 2 * i + 1);
      y(t, 2 * i) = cs * a - sn * b;
      y(t, 2 * i + 1) = sn * a + cs * b;
    }
  }
  return y;
}

template <typename T>
std::vector<Matrix<T>> mha_fwd(const std::vector<AttentionInputs<T>>& heads) {
  if (heads.empty()) throw ShapeError("mha_fwd: need at least one head");
  const Index len = heads.front().length();
  std::vector<Matrix<T>> outs;
  outs.reserve(heads.size());
  for (const auto& h : heads) {
    if (h.length() != len) throw ShapeError("mha_fwd: heads disagree on sequence length");
    outs.push_back(fgattn_fwd(h).out);
  }
  return outs;
}

#define FOX_INSTANTIATE(T)                                                                     \
  template struct AttentionInputs<T>;                                                          \
  template DecayBias<T> decay_bias<T>(const Vector<T>&);                                       \
  template RefAttention<T> fgattn_fwd<T>(const AttentionInputs<T>&);                           \
  template AttentionGrads<T> fgattn_bwd<T>(const AttentionInputs<T>&, const Matrix<T>&,         \
                                           const Matrix<T>&);                                  \
  template Matrix<T> rope_apply<T>(const Matrix<T>&, double, Index, bool);                     \
  template std::vector<Matrix<T>> mha_fwd<T>(const std::vector<AttentionInputs<T>>&);

FOX_INSTANTIATE(float)
FOX_INSTANTIATE(double)
#undef FOX_INSTANTIATE

}  // namespace fox
