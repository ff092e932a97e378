#ifndef FOX_LAYER_HPP_
#define FOX_LAYER_HPP_

// One attention layer in both flavours:
//   LLaMA: q = W_q x, k = W_k x, v = W_v x (optional RoPE), y = W_o o
//   Pro:   q = RMSNorm(W_q x), k = RMSNorm(shift(W_k x)), v = shift(W_v x),
//          g = sigmoid(W_g x), y = W_o (RMSNorm(o) * g)
// with o the Forgetting Attention output of each head under its own gate.
// Heads are fused: rows h*d_head .. (h+1)*d_head-1 of W_q/W_k/W_v/W_g and the
// matching columns of W_o belong to head h.

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fox/attention_ref.hpp"
#include "fox/rng.hpp"
#include "fox/tiled_attention.hpp"

namespace fox {

enum class Arch { Llama, Pro };
enum class GateKind { DataDependent, DataIndependent, Fixed, None };
enum class AttentionBackend { Reference, Tiled };
// Auto: zero bias for the data-dependent gate, per-head horizons otherwise.
enum class GateBiasInit { Auto, Zero, Horizons };

std::string to_string(Arch a);
std::string to_string(GateKind g);
std::string to_string(AttentionBackend b);
std::string to_string(GateBiasInit i);
Arch parse_arch(const std::string& s);
GateKind parse_gate_kind(const std::string& s);
AttentionBackend parse_backend(const std::string& s);
GateBiasInit parse_gate_bias_init(const std::string& s);

struct GateMode {
  GateKind kind = GateKind::DataDependent;
  // Decay-horizon range for the per-head bias init of the data-independent
  // and fixed gates.
  double t_min = 2.0;
  double t_max = 128.0;
  GateBiasInit bias_init = GateBiasInit::Auto;

  bool has_weight() const { return kind == GateKind::DataDependent; }
  bool has_bias() const { return kind != GateKind::None; }
  bool bias_frozen() const { return kind == GateKind::Fixed; }
  bool horizon_bias() const {
    return bias_init == GateBiasInit::Horizons ||
           (bias_init == GateBiasInit::Auto && kind != GateKind::DataDependent);
  }
};

struct ProFeatures {
  bool qk_norm = true;
  bool kv_shift = true;
  bool output_gate = true;
  bool output_norm = true;

  static ProFeatures all(bool on) { return {on, on, on, on}; }
  bool any() const { return qk_norm || kv_shift || output_gate || output_norm; }
};

struct LayerConfig {
  Index d_model = 64;
  Index n_heads = 4;
  Index d_head = 16;
  Arch arch = Arch::Pro;
  GateMode gate;
  ProFeatures features;
  bool rope = false;
  double rope_theta = 500000.0;
  double norm_eps = 1e-6;
  AttentionBackend backend = AttentionBackend::Tiled;
  TileConfig tiles;
  // Evaluation-only override: logf <- min(logf, cap).
  std::optional<double> logf_cap;

  Index width() const { return n_heads * d_head; }
  void validate() const;
};

LayerConfig llama_layer_config(Index d_model, Index n_heads, Index d_head, GateMode gate, bool rope);
LayerConfig pro_layer_config(Index d_model, Index n_heads, Index d_head, GateMode gate);

struct ParamInfo {
  bool decay = true;    // receives decoupled weight decay
  bool frozen = false;  // never touched by the optimizer
};

template <typename T>
struct LayerParams {
  Matrix<T> wq, wk, wv;        // width x d_model
  Matrix<T> wo;                // d_model x width
  Matrix<T> wg;                // width x d_model, output gate
  Matrix<T> shift_k, shift_v;  // n_heads x d_model, KV-shift mixers
  Matrix<T> wf;                // n_heads x d_model, data-dependent gate weight
  Matrix<T> bf;                // n_heads x 1, gate bias
  Matrix<T> q_norm, k_norm;    // n_heads x d_head
  Matrix<T> o_norm;            // n_heads x d_head
};

// Calls f(name, matrix, info) for every present (non-empty) tensor in a
// fixed order. Works for const and mutable params alike.
template <typename P, typename F>
void visit_layer_params(P& p, const LayerConfig& cfg, F&& f) {
  const ParamInfo weight{true, false};
  const ParamInfo norm{false, false};
  auto call = [&](const char* name, auto& m, ParamInfo info) {
    if (m.size() > 0) f(std::string(name), m, info);
  };
  call("wq", p.wq, weight);
  call("wk", p.wk, weight);
  call("wv", p.wv, weight);
  call("wo", p.wo, weight);
  call("wg", p.wg, weight);
  call("shift_k", p.shift_k, weight);
  call("shift_v", p.shift_v, weight);
  call("wf", p.wf, weight);
  call("bf", p.bf, ParamInfo{false, cfg.gate.bias_frozen()});
  call("q_norm", p.q_norm, norm);
  call("k_norm", p.k_norm, norm);
  call("o_norm", p.o_norm, norm);
}

// Linear weights ~ N(0, 0.02^2), norm scales 1, gate bias per GateMode.
template <typename T>
LayerParams<T> init_layer_params(const LayerConfig& cfg, Rng& rng);

template <typename T>
LayerParams<T> zeros_like(const LayerParams<T>& p);

// Horizons T^(h) geometric in [t_min, t_max] (t_min alone when H = 1).
std::vector<double> decay_horizons(double t_min, double t_max, Index n_heads);

// Bias b^(h) with sigmoid(b)^T = 1/e for each horizon.
std::vector<double> forget_gate_init(double t_min, double t_max, Index n_heads);

// b with sigmoid(b) = exp(-1/T).
double gate_bias_for_horizon(double horizon);

template <typename T>
struct ForgetGates {
  Matrix<T> f;     // L x H
  Matrix<T> logf;  // L x H, log sigmoid of the pre-activation
};

template <typename T>
ForgetGates<T> forget_gates(const Matrix<T>& x, const GateMode& mode, const LayerParams<T>& p,
                            Index n_heads);

// Single-head KV-shift: alpha_t = sigmoid(w^T x_t),
// out_t = alpha_t * xt_{t-1} + (1 - alpha_t) * xt_t with xt_{-1} = 0, then
// RMSNorm(gamma, eps) when `normalize`.
template <typename T>
Matrix<T> kv_shift(const Matrix<T>& x_tilde, const Matrix<T>& x, const Vector<T>& w, bool normalize,
                   const Vector<T>& gamma, T eps);

template <typename T>
struct LayerActivations {
  Matrix<T> x;
  Matrix<T> q_pre, k_pre, v_pre;  // raw projections
  Matrix<T> alpha_k, alpha_v;     // L x H shift mixers
  Matrix<T> k_mix;                // shifted keys before QK-norm
  Matrix<T> q_rot_in, k_rot_in;   // attention q/k before RoPE
  Matrix<T> q, k, v;              // attention inputs
  Matrix<T> f, logf;              // L x H
  Matrix<T> logf_capped;          // 1 where the eval cap was active
  Matrix<T> o;                    // attention output, L x width
  std::vector<ForwardAux<T>> aux;
  Matrix<T> o_normed;
  Matrix<T> g;
  Matrix<T> u;                    // input of W_o
};

template <typename T>
struct LayerOutput {
  Matrix<T> y;
  LayerActivations<T> acts;
};

template <typename T>
struct LayerGrads {
  Matrix<T> dx;
  LayerParams<T> dparams;
};

template <typename T>
LayerOutput<T> layer_fwd(const Matrix<T>& x, const LayerParams<T>& p, const LayerConfig& cfg);

template <typename T>
LayerOutput<T> pro_layer_fwd(const Matrix<T>& x, const LayerParams<T>& p, const LayerConfig& cfg);

template <typename T>
LayerOutput<T> llama_layer_fwd(const Matrix<T>& x, const LayerParams<T>& p, const LayerConfig& cfg);

template <typename T>
LayerGrads<T> layer_bwd(const LayerActivations<T>& acts, const Matrix<T>& dy, const LayerParams<T>& p,
                        const LayerConfig& cfg);

}  // namespace fox

#endif  // FOX_LAYER_HPP_
