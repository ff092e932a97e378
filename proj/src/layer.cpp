#include "fox/layer.hpp"

#include <algorithm>
#include <cmath>

namespace fox {

std::string to_string(Arch a) { return a == Arch::Llama ? "llama" : "pro"; }

std::string to_string(GateKind g) {
  switch (g) {
    case GateKind::DataDependent: return "data_dependent";
    case GateKind::DataIndependent: return "data_independent";
    case GateKind::Fixed: return "fixed";
    case GateKind::None: return "none";
  }
  return "none";
}

std::string to_string(AttentionBackend b) { return b == AttentionBackend::Tiled ? "tiled" : "reference"; }

std::string to_string(GateBiasInit i) {
  switch (i) {
    case GateBiasInit::Auto: return "auto";
    case GateBiasInit::Zero: return "zero";
    case GateBiasInit::Horizons: return "horizons";
  }
  return "auto";
}

GateBiasInit parse_gate_bias_init(const std::string& s) {
  if (s == "auto") return GateBiasInit::Auto;
  if (s == "zero") return GateBiasInit::Zero;
  if (s == "horizons") return GateBiasInit::Horizons;
  throw ConfigError("unknown gate bias init '" + s + "' (expected auto|zero|horizons)");
}

Arch parse_arch(const std::string& s) {
  if (s == "llama") return Arch::Llama;
  if (s == "pro") return Arch::Pro;
  throw ConfigError("unknown architecture '" + s + "' (expected llama|pro)");
}

GateKind parse_gate_kind(const std::string& s) {
  if (s == "data_dependent") return GateKind::DataDependent;
  if (s == "data_independent") return GateKind::DataIndependent;
  if (s == "fixed") return GateKind::Fixed;
  if (s == "none") return GateKind::None;
  throw ConfigError("unknown gate mode '" + s +
                    "' (expected data_dependent|data_independent|fixed|none)");
}

AttentionBackend parse_backend(const std::string& s) {
  if (s == "tiled") return AttentionBackend::Tiled;
  if (s == "reference") return AttentionBackend::Reference;
  throw ConfigError("unknown attention backend '" + s + "' (expected tiled|reference)");
}

void LayerConfig::validate() const {
  if (d_model < 1 || n_heads < 1 || d_head < 1) throw ConfigError("layer dims must be positive");
  if (arch == Arch::Llama && features.any()) {
    throw ConfigError("the llama architecture has no QK-norm, KV-shift or output gate/norm");
  }
  if (rope && d_head % 2 != 0) throw ConfigError("RoPE needs an even head dimension");
  if (!(norm_eps > 0.0)) throw ConfigError("norm eps must be positive");
  if (gate.has_bias() && gate.horizon_bias()) {
    if (!(gate.t_min > 0.0) || gate.t_min > gate.t_max) {
      throw ConfigError("gate horizons need 0 < t_min <= t_max");
    }
  }
  tiles.validate();
}

LayerConfig llama_layer_config(Index d_model, Index n_heads, Index d_head, GateMode gate, bool rope) {
  LayerConfig cfg;
  cfg.d_model = d_model;
  cfg.n_heads = n_heads;
  cfg.d_head = d_head;
  cfg.arch = Arch::Llama;
  cfg.gate = gate;
  cfg.features = ProFeatures::all(false);
  cfg.rope = rope;
  return cfg;
}

LayerConfig pro_layer_config(Index d_model, Index n_heads, Index d_head, GateMode gate) {
  LayerConfig cfg;
  cfg.d_model = d_model;
  cfg.n_heads = n_heads;
  cfg.d_head = d_head;
  cfg.arch = Arch::Pro;
  cfg.gate = gate;
  cfg.features = ProFeatures::all(true);
  return cfg;
}

double gate_bias_for_horizon(double horizon) {
  if (!(horizon > 0.0)) throw DomainError("decay horizon must be positive");
  // logit(exp(-1/T)) = -1/T - log(1 - exp(-1/T))
  const double r = 1.0 / horizon;
  return -r - std::log(-std::expm1(-r));
}

std::vector<double> decay_horizons(double t_min, double t_max, Index n_heads) {
  if (!(t_min > 0.0)) throw DomainError("t_min must be positive");
  if (t_min > t_max) throw DomainError("t_min must not exceed t_max");
  if (n_heads < 1) throw DomainError("need at least one head");
  std::vector<double> out(static_cast<std::size_t>(n_heads));
  if (n_heads == 1) {
    out[0] = t_min;
    return out;
  }
  // Geometric interpolation, evaluated in base 2 so power-of-two grids are exact.
  const double lo = std::log2(t_min), hi = std::log2(t_max);
  for (Index h = 0; h < n_heads; ++h) {
    out[static_cast<std::size_t>(h)] =
        std::exp2(lo + (hi - lo) * static_cast<double>(h) / static_cast<double>(n_heads - 1));
  }
  return out;
}

std::vector<double> forget_gate_init(double t_min, double t_max, Index n_heads) {
  std::vector<double> b = decay_horizons(t_min, t_max, n_heads);
  for (double& v : b) v = gate_bias_for_horizon(v);
  return b;
}

template <typename T>
LayerParams<T> init_layer_params(const LayerConfig& cfg, Rng& rng) {
  cfg.validate();
  const Index dm = cfg.d_model, w = cfg.width(), h = cfg.n_heads, dh = cfg.d_head;
  const double sd = 0.02;
  LayerParams<T> p;
  p.wq = random_normal<T>(w, dm, rng, sd);
  p.wk = random_normal<T>(w, dm, rng, sd);
  p.wv = random_normal<T>(w, dm, rng, sd);
  p.wo = random_normal<T>(dm, w, rng, sd);
  if (cfg.features.output_gate) p.wg = random_normal<T>(w, dm, rng, sd);
  if (cfg.features.kv_shift) {
    p.shift_k = random_normal<T>(h, dm, rng, sd);
    p.shift_v = random_normal<T>(h, dm, rng, sd);
  }
  if (cfg.gate.has_weight()) p.wf = random_normal<T>(h, dm, rng, sd);
  if (cfg.gate.has_bias()) {
    p.bf = Matrix<T>::Zero(h, 1);
    if (cfg.gate.horizon_bias()) {
      const auto b = forget_gate_init(cfg.gate.t_min, cfg.gate.t_max, h);
      for (Index i = 0; i < h; ++i) p.bf(i, 0) = static_cast<T>(b[static_cast<std::size_t>(i)]);
    }
  }
  if (cfg.features.qk_norm) {
    p.q_norm = Matrix<T>::Ones(h, dh);
    p.k_norm = Matrix<T>::Ones(h, dh);
  }
  if (cfg.features.output_norm) p.o_norm = Matrix<T>::Ones(h, dh);
  return p;
}

template <typename T>
LayerParams<T> zeros_like(const LayerParams<T>& p) {
  LayerParams<T> z;
  auto zero = [](const Matrix<T>& m) { return Matrix<T>::Zero(m.rows(), m.cols()).eval(); };
  z.wq = zero(p.wq);
  z.wk = zero(p.wk);
  z.wv = zero(p.wv);
  z.wo = zero(p.wo);
  z.wg = zero(p.wg);
  z.shift_k = zero(p.shift_k);
  z.shift_v = zero(p.shift_v);
  z.wf = zero(p.wf);
  z.bf = zero(p.bf);
  z.q_norm = zero(p.q_norm);
  z.k_norm = zero(p.k_norm);
  z.o_norm = zero(p.o_norm);
  return z;
}

template <typename T>
ForgetGates<T> forget_gates(const Matrix<T>& x, const GateMode& mode, const LayerParams<T>& p,
                            Index n_heads) {
  const Index len = x.rows();
  ForgetGates<T> g;
  if (mode.kind == GateKind::None) {
    g.f = Matrix<T>::Ones(len, n_heads);
    g.logf = Matrix<T>::Zero(len, n_heads);
    return g;
  }
  if (p.bf.rows() != n_heads) throw ShapeError("forget_gates: bias has the wrong head count");
  Matrix<T> z(len, n_heads);
  if (mode.kind == GateKind::DataDependent) {
    if (p.wf.rows() != n_heads || p.wf.cols() != x.cols()) {
      throw ShapeError("forget_gates: gate weight shape mismatch");
    }
    z.noalias() = x * p.wf.transpose();
    z.rowwise() += p.bf.col(0).transpose();
  } else {
    z.rowwise() = p.bf.col(0).transpose();
  }
  g.f = z.unaryExpr([](T v) { return sigmoid(v); });
  g.logf = z.unaryExpr([](T v) { return log_sigmoid(v); });
  return g;
}

namespace {

// mix_t = a_t * pre_{t-1} + (1 - a_t) * pre_t per head segment, pre_{-1} = 0.
template <typename T>
Matrix<T> shift_mix(const Matrix<T>& pre, const Matrix<T>& alpha, Index d_head) {
  Matrix<T> mix(pre.rows(), pre.cols());
  for (Index t = 0; t < pre.rows(); ++t) {
    for (Index h = 0; h < alpha.cols(); ++h) {
      const T a = alpha(t, h);
      auto cur = pre.row(t).segment(h * d_head, d_head);
      if (t == 0) {
        mix.row(t).segment(h * d_head, d_head) = (T(1) - a) * cur;
      } else {
        mix.row(t).segment(h * d_head, d_head) =
            a * pre.row(t - 1).segment(h * d_head, d_head) + (T(1) - a) * cur;
      }
    }
  }
  return mix;
}

// Reverse of shift_mix: returns d pre, writes d(alpha pre-activation).
template <typename T>
Matrix<T> shift_mix_bwd(const Matrix<T>& pre, const Matrix<T>& alpha, Index d_head,
                        const Matrix<T>& dmix, Matrix<T>& dalpha_logit) {
  Matrix<T> dpre = Matrix<T>::Zero(pre.rows(), pre.cols());
  dalpha_logit.setZero(alpha.rows(), alpha.cols());
  for (Index t = 0; t < pre.rows(); ++t) {
    for (Index h = 0; h < alpha.cols(); ++h) {
      const T a = alpha(t, h);
      auto dm = dmix.row(t).segment(h * d_head, d_head);
      dpre.row(t).segment(h * d_head, d_head) += (T(1) - a) * dm;
      T da = -dm.dot(pre.row(t).segment(h * d_head, d_head));
      if (t > 0) {
        dpre.row(t - 1).segment(h * d_head, d_head) += a * dm;
        da += dm.dot(pre.row(t - 1).segment(h * d_head, d_head));
      }
      dalpha_logit(t, h) = da * a * (T(1) - a);
    }
  }
  return dpre;
}

template <typename T>
Matrix<T> rope_heads(const Matrix<T>& m, Index n_heads, Index d_head, double theta, bool inverse) {
  Matrix<T> out(m.rows(), m.cols());
  for (Index h = 0; h < n_heads; ++h) {
    out.middleCols(h * d_head, d_head) =
        rope_apply<T>(m.middleCols(h * d_head, d_head), theta, 0, inverse);
  }
  return out;
}

template <typename T>
AttentionInputs<T> head_inputs(const LayerActivations<T>& a, Index h, Index d_head) {
  AttentionInputs<T> in;
  in.q = a.q.middleCols(h * d_head, d_head);
  in.k = a.k.middleCols(h * d_head, d_head);
  in.v = a.v.middleCols(h * d_head, d_head);
  in.logf = a.logf.col(h);
  in.scale = AttentionInputs<T>::default_scale(d_head);
  return in;
}

}  // namespace

template <typename T>
Matrix<T> kv_shift(const Matrix<T>& x_tilde, const Matrix<T>& x, const Vector<T>& w, bool normalize,
                   const Vector<T>& gamma, T eps) {
  if (x_tilde.rows() != x.rows() || w.size() != x.cols()) throw ShapeError("kv_shift: shape mismatch");
  const Matrix<T> alpha = (x * w).unaryExpr([](T z) { return sigmoid(z); });
  Matrix<T> mix = shift_mix(x_tilde, alpha, x_tilde.cols());
  if (!normalize) return mix;
  if (gamma.size() != x_tilde.cols()) throw ShapeError("kv_shift: gamma length mismatch");
  return rmsnorm_segments<T>(mix, gamma.transpose(), eps);
}

template <typename T>
LayerOutput<T> layer_fwd(const Matrix<T>& x, const LayerParams<T>& p, const LayerConfig& cfg) {
  cfg.validate();
  if (x.cols() != cfg.d_model) throw ShapeError("layer_fwd: input width != d_model");
  const Index len = x.rows(), nh = cfg.n_heads, dh = cfg.d_head;
  const T eps = static_cast<T>(cfg.norm_eps);
  const ProFeatures& feat = cfg.features;

  LayerOutput<T> res;
  LayerActivations<T>& a = res.acts;
  a.x = x;
  a.q_pre.noalias() = x * p.wq.transpose();
  a.k_pre.noalias() = x * p.wk.transpose();
  a.v_pre.noalias() = x * p.wv.transpose();

  const Matrix<T>* k_in = &a.k_pre;
  if (feat.kv_shift) {
    a.alpha_k = (x * p.shift_k.transpose()).unaryExpr([](T z) { return sigmoid(z); });
    a.alpha_v = (x * p.shift_v.transpose()).unaryExpr([](T z) { return sigmoid(z); });
    a.k_mix = shift_mix(a.k_pre, a.alpha_k, dh);
    a.v = shift_mix(a.v_pre, a.alpha_v, dh);
    k_in = &a.k_mix;
  } else {
    a.v = a.v_pre;
  }
  if (feat.qk_norm) {
    a.q_rot_in = rmsnorm_segments(a.q_pre, p.q_norm, eps);
    a.k_rot_in = rmsnorm_segments(*k_in, p.k_norm, eps);
  } else {
    a.q_rot_in = a.q_pre;
    a.k_rot_in = *k_in;
  }
  if (cfg.rope) {
    a.q = rope_heads(a.q_rot_in, nh, dh, cfg.rope_theta, false);
    a.k = rope_heads(a.k_rot_in, nh, dh, cfg.rope_theta, false);
  } else {
    a.q = a.q_rot_in;
    a.k = a.k_rot_in;
  }

  ForgetGates<T> gates = forget_gates(x, cfg.gate, p, nh);
  a.f = std::move(gates.f);
  a.logf = std::move(gates.logf);
  a.logf_capped = Matrix<T>::Zero(len, nh);
  if (cfg.logf_cap) {
    const T cap = static_cast<T>(std::min(*cfg.logf_cap, 0.0));
    for (Index i = 0; i < a.logf.size(); ++i) {
      if (a.logf.data()[i] > cap) {
        a.logf.data()[i] = cap;
        a.logf_capped.data()[i] = T(1);
      }
    }
  }

  a.o.resize(len, cfg.width());
  a.aux.clear();
  for (Index h = 0; h < nh; ++h) {
    const AttentionInputs<T> in = head_inputs(a, h, dh);
    if (cfg.backend == AttentionBackend::Tiled) {
      TiledForward<T> r = tiled_fwd(in, cfg.tiles);
      a.o.middleCols(h * dh, dh) = r.out;
      a.aux.push_back(std::move(r.aux));
    } else {
      a.o.middleCols(h * dh, dh) = fgattn_fwd(in).out;
    }
  }

  a.o_normed = feat.output_norm ? rmsnorm_segments(a.o, p.o_norm, eps) : a.o;
  if (feat.output_gate) {
    a.g = (x * p.wg.transpose()).unaryExpr([](T z) { return sigmoid(z); });
    a.u = (a.o_normed.array() * a.g.array()).matrix();
  } else {
    a.u = a.o_normed;
  }
  res.y.noalias() = a.u * p.wo.transpose();
  return res;
}

template <typename T>
LayerOutput<T> pro_layer_fwd(const Matrix<T>& x, const LayerParams<T>& p, const LayerConfig& cfg) {
  if (cfg.arch != Arch::Pro) throw ConfigError("pro_layer_fwd needs a Pro layer config");
  return layer_fwd(x, p, cfg);
}

template <typename T>
LayerOutput<T> llama_layer_fwd(const Matrix<T>& x, const LayerParams<T>& p, const LayerConfig& cfg) {
  if (cfg.arch != Arch::Llama) throw ConfigError("llama_layer_fwd needs a LLaMA layer config");
  return layer_fwd(x, p, cfg);
}

template <typename T>
LayerGrads<T> layer_bwd(const LayerActivations<T>& a, const Matrix<T>& dy, const LayerParams<T>& p,
                        const LayerConfig& cfg) {
  const Index len = a.x.rows(), nh = cfg.n_heads, dh = cfg.d_head;
  if (dy.rows() != len || dy.cols() != cfg.d_model) {
    throw ContractError("layer_bwd: dY does not match the saved activations");
  }
  if (cfg.backend == AttentionBackend::Tiled && static_cast<Index>(a.aux.size()) != nh) {
    throw ContractError("layer_bwd: activations were not produced by the tiled backend");
  }
  const T eps = static_cast<T>(cfg.norm_eps);
  const ProFeatures& feat = cfg.features;

  LayerGrads<T> res;
  LayerParams<T>& g = res.dparams;
  g = zeros_like(p);
  Matrix<T>& dx = res.dx;

  g.wo.noalias() = dy.transpose() * a.u;
  const Matrix<T> du = dy * p.wo;

  Matrix<T> do_normed;
  if (feat.output_gate) {
    const Matrix<T> dzg = (du.array() * a.o_normed.array() * a.g.array() * (T(1) - a.g.array())).matrix();
    do_normed = (du.array() * a.g.array()).matrix();
    g.wg.noalias() = dzg.transpose() * a.x;
    dx.noalias() = dzg * p.wg;
  } else {
    do_normed = du;
    dx.setZero(len, cfg.d_model);
  }
  const Matrix<T> d_o =
      feat.output_norm ? rmsnorm_segments_bwd(a.o, p.o_norm, eps, do_normed, g.o_norm) : do_normed;

  Matrix<T> dq(len, cfg.width()), dk(len, cfg.width()), dv(len, cfg.width());
  Matrix<T> dlogf(len, nh);
  for (Index h = 0; h < nh; ++h) {
    const AttentionInputs<T> in = head_inputs(a, h, dh);
    const Matrix<T> o_h = a.o.middleCols(h * dh, dh);
    const Matrix<T> do_h = d_o.middleCols(h * dh, dh);
    const AttentionGrads<T> ag = cfg.backend == AttentionBackend::Tiled
                                     ? tiled_bwd(in, o_h, a.aux[static_cast<std::size_t>(h)], do_h, cfg.tiles)
                                     : fgattn_bwd(in, o_h, do_h);
    dq.middleCols(h * dh, dh) = ag.dq;
    dk.middleCols(h * dh, dh) = ag.dk;
    dv.middleCols(h * dh, dh) = ag.dv;
    dlogf.col(h) = ag.dlogf;
  }

  // d log sigmoid(z) / dz = 1 - sigmoid(z); zero where the eval cap bit.
  if (cfg.gate.kind != GateKind::None) {
    const Matrix<T> dz =
        (dlogf.array() * (T(1) - a.f.array()) * (T(1) - a.logf_capped.array())).matrix();
    if (cfg.gate.kind == GateKind::DataDependent) {
      g.wf.noalias() = dz.transpose() * a.x;
      dx.noalias() += dz * p.wf;
    }
    if (!cfg.gate.bias_frozen()) g.bf.col(0) = dz.colwise().sum().transpose();
  }

  Matrix<T> dq_in = cfg.rope ? rope_heads(dq, nh, dh, cfg.rope_theta, true) : dq;
  Matrix<T> dk_in = cfg.rope ? rope_heads(dk, nh, dh, cfg.rope_theta, true) : dk;
  if (feat.qk_norm) {
    dq_in = rmsnorm_segments_bwd(a.q_pre, p.q_norm, eps, dq_in, g.q_norm);
    dk_in = rmsnorm_segments_bwd(feat.kv_shift ? a.k_mix : a.k_pre, p.k_norm, eps, dk_in, g.k_norm);
  }

  Matrix<T> dk_pre, dv_pre;
  if (feat.kv_shift) {
    Matrix<T> dza_k, dza_v;
    dk_pre = shift_mix_bwd(a.k_pre, a.alpha_k, dh, dk_in, dza_k);
    dv_pre = shift_mix_bwd(a.v_pre, a.alpha_v, dh, dv, dza_v);
    g.shift_k.noalias() = dza_k.transpose() * a.x;
    g.shift_v.noalias() = dza_v.transpose() * a.x;
    dx.noalias() += dza_k * p.shift_k;
    dx.noalias() += dza_v * p.shift_v;
  } else {
    dk_pre = std::move(dk_in);
    dv_pre = std::move(dv);
  }

  g.wq.noalias() = dq_in.transpose() * a.x;
  g.wk.noalias() = dk_pre.transpose() * a.x;
  g.wv.noalias() = dv_pre.transpose() * a.x;
  dx.noalias() += dq_in * p.wq;
  dx.noalias() += dk_pre * p.wk;
  dx.noalias() += dv_pre * p.wv;
  return res;
}

#define FOX_INSTANTIATE(T)                                                                        \
  template LayerParams<T> init_layer_params<T>(const LayerConfig&, Rng&);                         \
  template LayerParams<T> zeros_like<T>(const LayerParams<T>&);                                   \
  template ForgetGates<T> forget_gates<T>(const Matrix<T>&, const GateMode&, const LayerParams<T>&, \
                                          Index);                                                 \
  template Matrix<T> kv_shift<T>(const Matrix<T>&, const Matrix<T>&, const Vector<T>&, bool,      \
                                 const Vector<T>&, T);                                            \
  template LayerOutput<T> layer_fwd<T>(const Matrix<T>&, const LayerParams<T>&, const LayerConfig&); \
  template LayerOutput<T> pro_layer_fwd<T>(const Matrix<T>&, const LayerParams<T>&,               \
                                           const LayerConfig&);                                   \
  template LayerOutput<T> llama_layer_fwd<T>(const Matrix<T>&, const LayerParams<T>&,             \
                                             const LayerConfig&);                                 \
  template LayerGrads<T> layer_bwd<T>(const LayerActivations<T>&, const Matrix<T>&,               \
                                      const LayerParams<T>&, const LayerConfig&);

FOX_INSTANTIATE(float)
FOX_INSTANTIATE(double)
#undef FOX_INSTANTIATE

}  // namespace fox
