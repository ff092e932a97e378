#include "fox/tiled_attention.hpp"

#include <algorithm>
#include <cmath>

#include "fox/scratch.hpp"

namespace fox {

void TileConfig::validate() const {
  if (block_rows < 1 || block_cols < 1) throw ConfigError("tile sizes must be >= 1");
}

namespace {

struct Tile {
  Index r0, rows, c0, cols;

  // Every key in the block lies strictly after every query in the block.
  bool fully_masked() const { return c0 > r0 + rows - 1; }
};

// s = scale * Q_r K_c^T + c_i - c_j, masked above the diagonal.
template <typename T>
void biased_score_tile(const AttentionInputs<T>& inp, const Eigen::VectorXd& c, const Tile& t,
                       Matrix<T>& s) {
  auto st = s.topLeftCorner(t.rows, t.cols);
  st.noalias() = inp.q.middleRows(t.r0, t.rows) * inp.k.middleRows(t.c0, t.cols).transpose();
  for (Index a = 0; a < t.rows; ++a) {
    const Index i = t.r0 + a;
    for (Index b = 0; b < t.cols; ++b) {
      const Index j = t.c0 + b;
      st(a, b) = j > i ? kNegInf<T> : inp.scale * st(a, b) + decay_entry<T>(c, i, j);
    }
  }
}

// p = exp(s - lse_i), recomputed from the saved logsumexp.
template <typename T>
void probability_tile(const AttentionInputs<T>& inp, const Eigen::VectorXd& c,
                      const Vector<T>& lse, const Tile& t, Matrix<T>& p) {
  biased_score_tile(inp, c, t, p);
  for (Index a = 0; a < t.rows; ++a) {
    const T li = lse[t.r0 + a];
    for (Index b = 0; b < t.cols; ++b) {
      p(a, b) = is_masked(p(a, b)) ? T(0) : std::exp(p(a, b) - li);
    }
  }
}

// ds = p o (dO_r V_c^T - delta_r).
template <typename T>
void score_grad_tile(const AttentionInputs<T>& inp, const Matrix<T>& dout, const Vector<T>& delta,
                     const Tile& t, const Matrix<T>& p, Matrix<T>& dp, Matrix<T>& ds) {
  auto dpt = dp.topLeftCorner(t.rows, t.cols);
  dpt.noalias() = dout.middleRows(t.r0, t.rows) * inp.v.middleRows(t.c0, t.cols).transpose();
  ds.topLeftCorner(t.rows, t.cols) =
      (p.topLeftCorner(t.rows, t.cols).array() *
       (dpt.colwise() - delta.segment(t.r0, t.rows)).array())
          .matrix();
}

}  // namespace

template <typename T>
TiledForward<T> tiled_fwd(const AttentionInputs<T>& inp, const TileConfig& cfg) {
  inp.validate();
  cfg.validate();
  const Index len = inp.length();
  const Index dv = inp.v.cols();
  const Index br = std::min(cfg.block_rows, std::max<Index>(len, 1));
  const Index bc = std::min(cfg.block_cols, std::max<Index>(len, 1));

  TiledForward<T> res;
  res.aux.c = cumsum_fwd_f64(inp.logf);
  res.aux.lse.resize(len);
  res.out.resize(len, dv);

  scratch::Lease lease(scratch::bytes_of<T>(br * bc + br * dv + 2 * br));
  Matrix<T> s(br, bc);
  Matrix<T> acc(br, dv);
  Vector<T> m(br), l(br);

  for (Index r0 = 0; r0 < len; r0 += br) {
    const Index rows = std::min(br, len - r0);
    acc.topRows(rows).setZero();
    m.head(rows).setConstant(kNegInf<T>);
    l.head(rows).setZero();

    for (Index c0 = 0; c0 < len; c0 += bc) {
      const Tile t{r0, rows, c0, std::min(bc, len - c0)};
      if (t.fully_masked()) break;  // so is every later key block
      biased_score_tile(inp, res.aux.c, t, s);

      for (Index a = 0; a < rows; ++a) {
        T row_max = m[a];
        for (Index b = 0; b < t.cols; ++b) {
          if (!is_masked(s(a, b))) row_max = std::max(row_max, s(a, b));
        }
        // exp(m_old - m_new) with exp(-inf - x) := 0 on the first update.
        const T rescale = is_masked(m[a]) ? T(0) : std::exp(m[a] - row_max);
        T row_sum = 0;
        for (Index b = 0; b < t.cols; ++b) {
          s(a, b) = is_masked(s(a, b)) ? T(0) : std::exp(s(a, b) - row_max);
          row_sum += s(a, b);
        }
        m[a] = row_max;
        l[a] = rescale * l[a] + row_sum;
        acc.row(a) *= rescale;
      }
      acc.topRows(rows).noalias() +=
          s.topLeftCorner(rows, t.cols) * inp.v.middleRows(c0, t.cols);
    }

    for (Index a = 0; a < rows; ++a) {
      res.out.row(r0 + a) = acc.row(a) / l[a];
      res.aux.lse[r0 + a] = m[a] + std::log(l[a]);
    }
  }
  return res;
}

template <typename T>
AttentionGrads<T> tiled_bwd(const AttentionInputs<T>& inp, const Matrix<T>& out,
                            const ForwardAux<T>& aux, const Matrix<T>& dout,
                            const TileConfig& cfg) {
  inp.validate();
  cfg.validate();
  const Index len = inp.length();
  const Index d = inp.head_dim();
  const Index dv = inp.v.cols();
  if (aux.lse.size() != len || aux.c.size() != len) {
    throw ShapeError("tiled_bwd: forward aux does not match the inputs");
  }
  if (out.rows() != len || dout.rows() != len || out.cols() != dv || dout.cols() != dv) {
    throw ShapeError("tiled_bwd: O / dO shape does not match the inputs");
  }
  const Index br = std::min(cfg.block_rows, std::max<Index>(len, 1));
  const Index bc = std::min(cfg.block_cols, std::max<Index>(len, 1));

  AttentionGrads<T> g;
  g.dq.resize(len, d);
  g.dk.resize(len, d);
  g.dv.resize(len, dv);

  // Per-row statistics are O(L), like lse; only tiles are O(B_r * B_c).
  scratch::Lease rows_lease(scratch::bytes_of<T>(3 * len));
  const Vector<T> delta = (dout.array() * out.array()).rowwise().sum();
  Vector<T> dc_k(len), dc_q(len);

  const Index widest = std::max(br, bc);
  scratch::Lease lease(
      scratch::bytes_of<T>(3 * br * bc + widest * (2 * d + dv) + 2 * widest));
  Matrix<T> p(br, bc), dp(br, bc), ds(br, bc);

  // Key-block pass: dK_j, dV_j, dc^k_j.
  Matrix<T> dk_acc(bc, d), dv_acc(bc, dv);
  Vector<T> dck_acc(bc);
  for (Index c0 = 0; c0 < len; c0 += bc) {
    const Index cols = std::min(bc, len - c0);
    dk_acc.topRows(cols).setZero();
    dv_acc.topRows(cols).setZero();
    dck_acc.head(cols).setZero();
    for (Index r0 = (c0 / br) * br; r0 < len; r0 += br) {
      const Tile t{r0, std::min(br, len - r0), c0, cols};
      if (t.fully_masked()) continue;
      probability_tile(inp, aux.c, aux.lse, t, p);
      score_grad_tile(inp, dout, delta, t, p, dp, ds);
      const auto pt = p.topLeftCorner(t.rows, cols);
      const auto dst = ds.topLeftCorner(t.rows, cols);
      dv_acc.topRows(cols).noalias() += pt.transpose() * dout.middleRows(r0, t.rows);
      dk_acc.topRows(cols).noalias() += dst.transpose() * inp.q.middleRows(r0, t.rows);
      dck_acc.head(cols) -= dst.colwise().sum().transpose();
    }
    g.dk.middleRows(c0, cols) = inp.scale * dk_acc.topRows(cols);
    g.dv.middleRows(c0, cols) = dv_acc.topRows(cols);
    dc_k.segment(c0, cols) = dck_acc.head(cols);
  }

  // Query-block pass: dQ_i, dc^q_i.
  Matrix<T> dq_acc(br, d);
  Vector<T> dcq_acc(br);
  for (Index r0 = 0; r0 < len; r0 += br) {
    const Index rows = std::min(br, len - r0);
    dq_acc.topRows(rows).setZero();
    dcq_acc.head(rows).setZero();
    for (Index c0 = 0; c0 < len; c0 += bc) {
      const Tile t{r0, rows, c0, std::min(bc, len - c0)};
      if (t.fully_masked()) break;
      probability_tile(inp, aux.c, aux.lse, t, p);
      score_grad_tile(inp, dout, delta, t, p, dp, ds);
      const auto dst = ds.topLeftCorner(rows, t.cols);
      dq_acc.topRows(rows).noalias() += dst * inp.k.middleRows(c0, t.cols);
      dcq_acc.head(rows) += dst.rowwise().sum();
    }
    g.dq.middleRows(r0, rows) = inp.scale * dq_acc.topRows(rows);
    dc_q.segment(r0, rows) = dcq_acc.head(rows);
  }

  g.dlogf = cumsum_rev<T>(dc_q + dc_k);
  return g;
}

#define FOX_INSTANTIATE(T)                                                                    \
  template TiledForward<T> tiled_fwd<T>(const AttentionInputs<T>&, const TileConfig&);        \
  template AttentionGrads<T> tiled_bwd<T>(const AttentionInputs<T>&, const Matrix<T>&,        \
                                          const ForwardAux<T>&, const Matrix<T>&,             \
                                          const TileConfig&);

FOX_INSTANTIATE(float)
FOX_INSTANTIATE(double)
#undef FOX_INSTANTIATE

}  // namespace fox
