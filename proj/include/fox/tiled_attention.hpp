#ifndef FOX_TILED_ATTENTION_HPP_
#define FOX_TILED_ATTENTION_HPP_

// Blocked Forgetting Attention with an online softmax. Neither pass ever
// holds an L x L buffer: the forward keeps a running max and normaliser per
// query row, the backward recomputes probability tiles from the saved
// logsumexp.

#include "fox/attention_ref.hpp"

namespace fox {

struct TileConfig {
  Index block_rows = 64;  // query rows per block
  Index block_cols = 64;  // key columns per block

  void validate() const;
};

template <typename T>
struct ForwardAux {
  Vector<T> lse;      // log sum_j exp(s_ij) per query row
  Eigen::VectorXd c;  // cumulative log forget gates
};

template <typename T>
struct TiledForward {
  Matrix<T> out;
  ForwardAux<T> aux;
};

template <typename T>
TiledForward<T> tiled_fwd(const AttentionInputs<T>& inp, const TileConfig& cfg);

// Two passes: one over key blocks for dK, dV and the key-side part of dc,
// one over query blocks for dQ and the query-side part. Each block owns its
// slice of the outputs.
template <typename T>
AttentionGrads<T> tiled_bwd(const AttentionInputs<T>& inp, const Matrix<T>& out,
                            const ForwardAux<T>& aux, const Matrix<T>& dout,
                            const TileConfig& cfg);

}  // namespace fox

#endif  // FOX_TILED_ATTENTION_HPP_
