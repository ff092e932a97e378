#ifndef FOX_ATTENTION_REF_HPP_
#define FOX_ATTENTION_REF_HPP_

// Materialised O(L^2) Forgetting Attention. This is the correctness oracle
// for the tiled kernels and the backend used for small gradient checks.

#include <vector>

#include "fox/tensor.hpp"

namespace fox {

template <typename T>
struct AttentionInputs {
  Matrix<T> q, k, v;  // L x d_head
  Vector<T> logf;     // L, entries <= 0
  T scale = T(1);

  Index length() const { return q.rows(); }
  Index head_dim() const { return q.cols(); }

  // Throws ShapeError / DomainError on violated invariants.
  void validate() const;

  static T default_scale(Index d_head) { return T(1) / std::sqrt(static_cast<T>(d_head)); }
};

// c_i = sum_{l<=i} logf_l (double accumulation); D_ij = c_i - c_j for i >= j,
// kNegInf above the diagonal.
template <typename T>
struct DecayBias {
  Eigen::VectorXd c;
  Matrix<T> d;
};

template <typename T>
struct AttentionGrads {
  Matrix<T> dq, dk, dv;
  Vector<T> dlogf;
};

template <typename T>
struct RefAttention {
  Matrix<T> out;     // L x d_head
  Matrix<T> scores;  // L x L, rows sum to one
};

template <typename T>
DecayBias<T> decay_bias(const Vector<T>& logf);

// Causal bias entry from the cumulative log-gates. Shared by both backends so
// that they see identical logits.
template <typename T>
inline T decay_entry(const Eigen::VectorXd& c, Index i, Index j) {
  return static_cast<T>(c[i] - c[j]);
}

template <typename T>
RefAttention<T> fgattn_fwd(const AttentionInputs<T>& inp);

// Untiled backward: the attention probabilities are recomputed from inp.
template <typename T>
AttentionGrads<T> fgattn_bwd(const AttentionInputs<T>& inp, const Matrix<T>& out,
                             const Matrix<T>& dout);

// ALiBi slope m corresponds to the constant log forget gate -m.
double fixed_gate_from_alibi_slope(double slope);

// Rotary embedding over consecutive pairs (x_{2i}, x_{2i+1}) with frequency
// base_theta^{-2i/d}. `inverse` rotates by the negated angle, which is the
// transpose used in backward passes.
template <typename T>
Matrix<T> rope_apply(const Matrix<T>& x, double base_theta, Index start_pos, bool inverse = false);

template <typename T>
std::vector<Matrix<T>> mha_fwd(const std::vector<AttentionInputs<T>>& heads);

}  // namespace fox

#endif  // FOX_ATTENTION_REF_HPP_
