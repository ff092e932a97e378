#ifndef FOX_LINEAR_ATTENTION_HPP_
#define FOX_LINEAR_ATTENTION_HPP_

// Normalised (gated) linear attention in recurrent and parallel form. Double
// precision only; this layer exists to check the recurrent/parallel identity
// that Forgetting Attention generalises, not to train.

#include "fox/tensor.hpp"

namespace fox::gla {

using Mat = Matrix<double>;
using Vec = Vector<double>;

enum class FeatureMap { ShiftedExpLinear };

struct FeatureMapSpec {
  FeatureMap kind = FeatureMap::ShiftedExpLinear;
};

// Recurrent state: S_t (d_v x d') and normaliser z_t (d').
struct State {
  Mat s;
  Vec z;
};

// phi(u) = u + 1 for u > 0, exp(u) otherwise. Strictly positive.
Vec phi_feature(const Vec& x, const FeatureMapSpec& spec = {});
Mat phi_rows(const Mat& x, const FeatureMapSpec& spec = {});

// S_t = f_t S_{t-1} + v_t phi(k_t)^T, z_t = f_t z_{t-1} + phi(k_t),
// o_t = S_t phi(q_t) / z_t^T phi(q_t).
Mat gla_recurrent(const Mat& k, const Mat& q, const Mat& v, const Vec& f,
                  const FeatureMapSpec& spec = {});

// o_i = sum_j F_ij k(q_i,k_j) v_j / sum_j F_ij k(q_i,k_j) with
// F_ij = exp(c_i - c_j), c the cumulative log gates.
Mat gla_parallel(const Mat& k, const Mat& q, const Mat& v, const Vec& f,
                 const FeatureMapSpec& spec = {});

// Ungated causal linear attention evaluated directly from its definition.
Mat linear_attention(const Mat& k, const Mat& q, const Mat& v, const FeatureMapSpec& spec = {});

}  // namespace fox::gla

#endif  // FOX_LINEAR_ATTENTION_HPP_
