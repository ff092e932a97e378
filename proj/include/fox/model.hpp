#ifndef FOX_MODEL_HPP_
#define FOX_MODEL_HPP_

// Desk-scale language model: embedding, n pre-norm blocks
//   h = x + Attn(RMSNorm(x)),  out = h + MLP(RMSNorm(h)),
// final RMSNorm and an untied output head. The MLP is gated:
//   MLP(x) = W_2 (W_1 x * silu(W_g x)).

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fox/layer.hpp"

namespace fox {

using Token = std::int32_t;

struct ModelConfig {
  Index n_layers = 2;
  Index d_model = 64;
  Index n_heads = 4;
  Index d_head = 16;
  Index vocab_size = 16;
  Index max_train_len = 128;
  // Hard cap on evaluated sequence length; extrapolation runs may exceed
  // max_train_len but never this.
  Index max_len = 1 << 16;
  Arch arch = Arch::Pro;
  GateMode gate;
  double mlp_ratio = 8.0 / 3.0;
  bool rope = false;
  double rope_theta = 500000.0;
  double norm_eps = 1e-6;
  AttentionBackend backend = AttentionBackend::Tiled;
  TileConfig tiles;
  std::optional<double> logf_cap;

  void validate() const;
  LayerConfig layer_config() const;
  // round(mlp_ratio * d_model) for LLaMA; Pro shrinks it so the extra Pro
  // parameters are paid for by the MLP.
  Index mlp_hidden() const;
};

// Parameters a Pro layer has on top of a LLaMA layer with the same gate.
Index pro_extra_params_per_layer(const ModelConfig& cfg);

template <typename T>
struct BlockParams {
  Matrix<T> attn_norm;  // 1 x d_model
  LayerParams<T> attn;
  Matrix<T> mlp_norm;   // 1 x d_model
  Matrix<T> w1, wgate;  // hidden x d_model
  Matrix<T> w2;         // d_model x hidden
};

template <typename T>
struct ModelParams {
  Matrix<T> embedding;  // vocab x d_model
  std::vector<BlockParams<T>> blocks;
  Matrix<T> final_norm;  // 1 x d_model
  Matrix<T> head;        // d_model x vocab
};

// f(name, matrix, info) over every tensor in checkpoint order.
template <typename P, typename F>
void visit_model_params(P& p, const ModelConfig& cfg, F&& f) {
  const ParamInfo weight{true, false};
  const ParamInfo norm{false, false};
  const LayerConfig lc = cfg.layer_config();
  f(std::string("embedding"), p.embedding, weight);
  for (std::size_t b = 0; b < p.blocks.size(); ++b) {
    auto& blk = p.blocks[b];
    const std::string pre = "blocks." + std::to_string(b) + ".";
    f(pre + "attn_norm", blk.attn_norm, norm);
    visit_layer_params(blk.attn, lc, [&](const std::string& n, auto& m, ParamInfo info) {
      f(pre + "attn." + n, m, info);
    });
    f(pre + "mlp_norm", blk.mlp_norm, norm);
    f(pre + "mlp.w1", blk.w1, weight);
    f(pre + "mlp.wgate", blk.wgate, weight);
    f(pre + "mlp.w2", blk.w2, weight);
  }
  f(std::string("final_norm"), p.final_norm, norm);
  f(std::string("head"), p.head, weight);
}

template <typename T>
ModelParams<T> init_model_params(const ModelConfig& cfg, Rng& rng);

template <typename T>
ModelParams<T> zeros_like(const ModelParams<T>& p, const ModelConfig& cfg);

template <typename T>
std::size_t count_params(const ModelParams<T>& p, const ModelConfig& cfg);

template <typename T>
struct BlockActivations {
  Matrix<T> x_in;
  Matrix<T> attn_in;  // RMSNorm(x_in)
  LayerActivations<T> attn;
  Matrix<T> h;        // x_in + attention
  Matrix<T> mlp_in;   // RMSNorm(h)
  Matrix<T> a1, a2;   // W_1 x, W_g x
  Matrix<T> m;        // a1 * silu(a2)
};

template <typename T>
struct ModelActivations {
  std::vector<Token> tokens;
  std::vector<BlockActivations<T>> blocks;
  Matrix<T> x_final;
  Matrix<T> x_normed;
};

template <typename T>
struct ModelOutput {
  Matrix<T> logits;  // L x vocab
  ModelActivations<T> acts;
};

template <typename T>
ModelOutput<T> model_fwd(std::span<const Token> tokens, const ModelParams<T>& p, const ModelConfig& cfg);

// dlogits is the cotangent of the logits.
template <typename T>
ModelParams<T> model_bwd(const ModelActivations<T>& acts, const Matrix<T>& dlogits,
                         const ModelParams<T>& p, const ModelConfig& cfg);

struct CrossEntropy {
  double loss = 0.0;         // mean over positions
  Eigen::VectorXd per_pos;   // -log p(target) per position
};

// Computed through logsumexp; probabilities are never formed explicitly.
template <typename T>
CrossEntropy cross_entropy(const Matrix<T>& logits, std::span<const Token> targets);

// Gradient of sum_i weight_i * loss_i with respect to the logits.
template <typename T>
Matrix<T> cross_entropy_grad(const Matrix<T>& logits, std::span<const Token> targets,
                             const Eigen::VectorXd& weights);

}  // namespace fox

#endif  // FOX_MODEL_HPP_
