#include "fox/model.hpp"

#include <algorithm>
#include <cmath>

namespace fox {

void ModelConfig::validate() const {
  if (n_layers < 1) throw ConfigError("model.n_layers must be >= 1");
  if (d_model != n_heads * d_head) throw ConfigError("model.d_model must equal n_heads * d_head");
  if (vocab_size < 2) throw ConfigError("model.vocab_size must be >= 2");
  if (!(mlp_ratio > 0.0)) throw ConfigError("model.mlp_ratio must be positive");
  if (max_train_len < 1 || max_len < 1) throw ConfigError("model lengths must be positive");
  layer_config().validate();
  if (mlp_hidden() < 1) throw ConfigError("MLP hidden size collapsed to zero");
}

LayerConfig ModelConfig::layer_config() const {
  LayerConfig lc = arch == Arch::Pro ? pro_layer_config(d_model, n_heads, d_head, gate)
                                     : llama_layer_config(d_model, n_heads, d_head, gate, rope);
  lc.rope = rope;
  lc.rope_theta = rope_theta;
  lc.norm_eps = norm_eps;
  lc.backend = backend;
  lc.tiles = tiles;
  lc.logf_cap = logf_cap;
  return lc;
}

Index pro_extra_params_per_layer(const ModelConfig& cfg) {
  const Index width = cfg.n_heads * cfg.d_head;
  const Index gate = width * cfg.d_model;             // W_g
  const Index shift = 2 * cfg.n_heads * cfg.d_model;  // w_k, w_v
  const Index norms = 3 * cfg.n_heads * cfg.d_head;   // QK-norm and output norm
  return gate + shift + norms;
}

Index ModelConfig::mlp_hidden() const {
  const auto base = static_cast<Index>(std::llround(mlp_ratio * static_cast<double>(d_model)));
  if (arch == Arch::Llama) return base;
  // The gated MLP costs 3 * d_model parameters per hidden unit.
  const double per_unit = 3.0 * static_cast<double>(d_model);
  return base - static_cast<Index>(std::llround(static_cast<double>(pro_extra_params_per_layer(*this)) / per_unit));
}

template <typename T>
ModelParams<T> init_model_params(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  const double sd = 0.02;
  const Index dm = cfg.d_model, hid = cfg.mlp_hidden();
  const LayerConfig lc = cfg.layer_config();
  ModelParams<T> p;
  p.embedding = random_normal<T>(cfg.vocab_size, dm, rng, sd);
  for (Index b = 0; b < cfg.n_layers; ++b) {
    BlockParams<T> blk;
    blk.attn_norm = Matrix<T>::Ones(1, dm);
    blk.attn = init_layer_params<T>(lc, rng);
    blk.mlp_norm = Matrix<T>::Ones(1, dm);
    blk.w1 = random_normal<T>(hid, dm, rng, sd);
    blk.wgate = random_normal<T>(hid, dm, rng, sd);
    blk.w2 = random_normal<T>(dm, hid, rng, sd);
    p.blocks.push_back(std::move(blk));
  }
  p.final_norm = Matrix<T>::Ones(1, dm);
  p.head = random_normal<T>(dm, cfg.vocab_size, rng, sd);
  return p;
}

template <typename T>
ModelParams<T> zeros_like(const ModelParams<T>& p, const ModelConfig& cfg) {
  ModelParams<T> z = p;
  visit_model_params(z, cfg, [](const std::string&, Matrix<T>& m, ParamInfo) { m.setZero(); });
  // Layer tensors that are absent stay empty; visit skips them.
  return z;
}

template <typename T>
std::size_t count_params(const ModelParams<T>& p, const ModelConfig& cfg) {
  std::size_t n = 0;
  visit_model_params(p, cfg, [&](const std::string&, const Matrix<T>& m, ParamInfo) {
    n += static_cast<std::size_t>(m.size());
  });
  return n;
}

namespace {

template <typename T>
Matrix<T> silu_of(const Matrix<T>& z) {
  return z.unaryExpr([](T v) { return silu(v); });
}

template <typename T>
Matrix<T> silu_grad(const Matrix<T>& z) {
  return z.unaryExpr([](T v) {
    const T s = sigmoid(v);
    return s * (T(1) + v * (T(1) - s));
  });
}

}  // namespace

template <typename T>
ModelOutput<T> model_fwd(std::span<const Token> tokens, const ModelParams<T>& p, const ModelConfig& cfg) {
  const auto len = static_cast<Index>(tokens.size());
  if (len < 1) throw InputError("model_fwd: empty token sequence");
  if (len > cfg.max_len) throw InputError("model_fwd: sequence longer than model.max_len");
  if (static_cast<Index>(p.blocks.size()) != cfg.n_layers) {
    throw ContractError("model_fwd: parameter block count != n_layers");
  }
  const T eps = static_cast<T>(cfg.norm_eps);
  const LayerConfig lc = cfg.layer_config();

  ModelOutput<T> res;
  ModelActivations<T>& acts = res.acts;
  acts.tokens.assign(tokens.begin(), tokens.end());

  Matrix<T> x(len, cfg.d_model);
  for (Index t = 0; t < len; ++t) {
    const Token tok = tokens[static_cast<std::size_t>(t)];
    if (tok < 0 || tok >= cfg.vocab_size) {
      throw InputError("model_fwd: token " + std::to_string(tok) + " outside the vocabulary");
    }
    x.row(t) = p.embedding.row(tok);
  }

  acts.blocks.resize(p.blocks.size());
  for (std::size_t b = 0; b < p.blocks.size(); ++b) {
    const BlockParams<T>& bp = p.blocks[b];
    BlockActivations<T>& ba = acts.blocks[b];
    ba.x_in = x;
    ba.attn_in = rmsnorm_segments(x, bp.attn_norm, eps);
    LayerOutput<T> lo = layer_fwd(ba.attn_in, bp.attn, lc);
    ba.attn = std::move(lo.acts);
    ba.h = x + lo.y;
    ba.mlp_in = rmsnorm_segments(ba.h, bp.mlp_norm, eps);
    ba.a1.noalias() = ba.mlp_in * bp.w1.transpose();
    ba.a2.noalias() = ba.mlp_in * bp.wgate.transpose();
    ba.m = (ba.a1.array() * silu_of(ba.a2).array()).matrix();
    x = ba.h;
    x.noalias() += ba.m * bp.w2.transpose();
  }
  acts.x_final = x;
  acts.x_normed = rmsnorm_segments(x, p.final_norm, eps);
  res.logits.noalias() = acts.x_normed * p.head;
  return res;
}

template <typename T>
ModelParams<T> model_bwd(const ModelActivations<T>& acts, const Matrix<T>& dlogits,
                         const ModelParams<T>& p, const ModelConfig& cfg) {
  const auto len = static_cast<Index>(acts.tokens.size());
  if (dlogits.rows() != len || dlogits.cols() != cfg.vocab_size) {
    throw ContractError("model_bwd: dlogits does not match the saved activations");
  }
  if (acts.blocks.size() != p.blocks.size()) throw ContractError("model_bwd: block count mismatch");
  const T eps = static_cast<T>(cfg.norm_eps);
  const LayerConfig lc = cfg.layer_config();

  ModelParams<T> g = zeros_like(p, cfg);
  g.head.noalias() = acts.x_normed.transpose() * dlogits;
  Matrix<T> dx = rmsnorm_segments_bwd(acts.x_final, p.final_norm, eps,
                                      Matrix<T>(dlogits * p.head.transpose()), g.final_norm);

  for (std::size_t bi = p.blocks.size(); bi-- > 0;) {
    const BlockParams<T>& bp = p.blocks[bi];
    const BlockActivations<T>& ba = acts.blocks[bi];
    BlockParams<T>& gb = g.blocks[bi];

    // out = h + m W_2^T
    gb.w2.noalias() = dx.transpose() * ba.m;
    const Matrix<T> dm = dx * bp.w2;
    const Matrix<T> da1 = (dm.array() * silu_of(ba.a2).array()).matrix();
    const Matrix<T> da2 = (dm.array() * ba.a1.array() * silu_grad(ba.a2).array()).matrix();
    gb.w1.noalias() = da1.transpose() * ba.mlp_in;
    gb.wgate.noalias() = da2.transpose() * ba.mlp_in;
    Matrix<T> dmlp_in = da1 * bp.w1;
    dmlp_in.noalias() += da2 * bp.wgate;
    Matrix<T> dh = dx + rmsnorm_segments_bwd(ba.h, bp.mlp_norm, eps, dmlp_in, gb.mlp_norm);

    // h = x + Attn(RMSNorm(x))
    LayerGrads<T> lg = layer_bwd(ba.attn, dh, bp.attn, lc);
    gb.attn = std::move(lg.dparams);
    dx = dh + rmsnorm_segments_bwd(ba.x_in, bp.attn_norm, eps, lg.dx, gb.attn_norm);
  }

  for (Index t = 0; t < len; ++t) g.embedding.row(acts.tokens[static_cast<std::size_t>(t)]) += dx.row(t);
  return g;
}

template <typename T>
CrossEntropy cross_entropy(const Matrix<T>& logits, std::span<const Token> targets) {
  const Index len = logits.rows();
  if (static_cast<Index>(targets.size()) != len) throw ShapeError("cross_entropy: targets length mismatch");
  CrossEntropy ce;
  ce.per_pos.resize(len);
  double total = 0.0;
  for (Index t = 0; t < len; ++t) {
    const Token y = targets[static_cast<std::size_t>(t)];
    if (y < 0 || y >= logits.cols()) throw InputError("cross_entropy: target outside the vocabulary");
    const double mx = static_cast<double>(logits.row(t).maxCoeff());
    double s = 0.0;
    for (Index j = 0; j < logits.cols(); ++j) s += std::exp(static_cast<double>(logits(t, j)) - mx);
    const double lse = mx + std::log(s);
    ce.per_pos[t] = lse - static_cast<double>(logits(t, y));
    total += ce.per_pos[t];
  }
  ce.loss = len > 0 ? total / static_cast<double>(len) : 0.0;
  return ce;
}

template <typename T>
Matrix<T> cross_entropy_grad(const Matrix<T>& logits, std::span<const Token> targets,
                             const Eigen::VectorXd& weights) {
  const Index len = logits.rows();
  if (static_cast<Index>(targets.size()) != len || weights.size() != len) {
    throw ShapeError("cross_entropy_grad: length mismatch");
  }
  Matrix<T> d = Matrix<T>::Zero(len, logits.cols());
  for (Index t = 0; t < len; ++t) {
    const double w = weights[t];
    if (w == 0.0) continue;
    const double mx = static_cast<double>(logits.row(t).maxCoeff());
    double s = 0.0;
    for (Index j = 0; j < logits.cols(); ++j) s += std::exp(static_cast<double>(logits(t, j)) - mx);
    const double lse = mx + std::log(s);
    for (Index j = 0; j < logits.cols(); ++j) {
      d(t, j) = static_cast<T>(w * std::exp(static_cast<double>(logits(t, j)) - lse));
    }
    d(t, targets[static_cast<std::size_t>(t)]) -= static_cast<T>(w);
  }
  return d;
}

#define FOX_INSTANTIATE(T)                                                                        \
  template ModelParams<T> init_model_params<T>(const ModelConfig&, Rng&);                        \
  template ModelParams<T> zeros_like<T>(const ModelParams<T>&, const ModelConfig&);              \
  template std::size_t count_params<T>(const ModelParams<T>&, const ModelConfig&);               \
  template ModelOutput<T> model_fwd<T>(std::span<const Token>, const ModelParams<T>&,            \
                                       const ModelConfig&);                                      \
  template ModelParams<T> model_bwd<T>(const ModelActivations<T>&, const Matrix<T>&,             \
                                       const ModelParams<T>&, const ModelConfig&);               \
  template CrossEntropy cross_entropy<T>(const Matrix<T>&, std::span<const Token>);              \
  template Matrix<T> cross_entropy_grad<T>(const Matrix<T>&, std::span<const Token>,             \
                                           const Eigen::VectorXd&);

FOX_INSTANTIATE(float)
FOX_INSTANTIATE(double)
#undef FOX_INSTANTIATE

}  // namespace fox
