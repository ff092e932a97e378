#include "fox/suites.hpp"

#include <chrono>
#include <cmath>

#include "fox/attention_ref.hpp"
#include "fox/layer.hpp"
#include "fox/linear_attention.hpp"
#include "fox/model.hpp"
#include "fox/rng.hpp"
#include "fox/scratch.hpp"
#include "fox/tiled_attention.hpp"

namespace fox {

namespace {

// Streams of one seed, one per suite group.
enum Stream : std::uint64_t {
  kCoreRef = 1,
  kCoreTiled,
  kProLayer,
  kLlamaLayer,
  kModel,
  kFwd32,
  kFwd64,
  kBwd32,
  kBwd64,
  kGla,
  kUnitGate,
  kAlibi,
  kBench,
};

template <typename T>
AttentionInputs<T> random_inputs(Index len, Index d, Rng& rng) {
  AttentionInputs<T> in;
  in.q = random_normal<T>(len, d, rng);
  in.k = random_normal<T>(len, d, rng);
  in.v = random_normal<T>(len, d, rng);
  const Matrix<double> u = random_uniform<double>(len, 1, rng, 0.3, 0.99);
  in.logf = u.array().log().matrix().template cast<T>();
  in.scale = AttentionInputs<T>::default_scale(d);
  return in;
}

Index pick(Rng& rng, Index lo, Index hi) { return std::uniform_int_distribution<Index>(lo, hi)(rng); }

Index pick_tile(Rng& rng, Index len) {
  const Index opts[] = {1, 2, 16, 64, len};
  return opts[pick(rng, 0, 4)];
}

double attention_loss(const Matrix<double>& out, const Matrix<double>& r) { return (out.array() * r.array()).sum(); }

CheckResult core_gradcheck(std::uint64_t seed, bool tiled) {
  Rng rng = make_rng(seed, tiled ? kCoreTiled : kCoreRef);
  CheckResult res{tiled ? "attention_core_tiled" : "attention_core_ref", 0, 0.0, 1e-6};
  for (Index c = 0; c < 12; ++c) {
    const Index len = pick(rng, 1, 8);
    AttentionInputs<double> in = random_inputs<double>(len, 4, rng);
    const TileConfig tiles{pick(rng, 1, 4), pick(rng, 1, 4)};
    const Matrix<double> r = random_normal<double>(len, 4, rng);
    auto forward = [&] { return tiled ? tiled_fwd(in, tiles).out : fgattn_fwd(in).out; };
    auto loss = [&] { return attention_loss(forward(), r); };

    AttentionGrads<double> g;
    if (tiled) {
      const TiledForward<double> f = tiled_fwd(in, tiles);
      g = tiled_bwd(in, f.out, f.aux, r, tiles);
    } else {
      g = fgattn_bwd(in, fgattn_fwd(in).out, r);
    }
    Matrix<double> logf = in.logf;
    auto logf_loss = [&] {
      in.logf = logf.col(0);
      return loss();
    };
    res.worst = std::max({res.worst, max_rel_error(g.dq, numeric_grad(in.q, loss)),
                          max_rel_error(g.dk, numeric_grad(in.k, loss)),
                          max_rel_error(g.dv, numeric_grad(in.v, loss)),
                          max_rel_error(g.dlogf, numeric_grad(logf, logf_loss).col(0))});
    ++res.cases;
  }
  return res;
}

template <typename P, typename C>
void jitter(P& p, const C& cfg, Rng& rng, double sd) {
  auto add = [&](const std::string&, Matrix<double>& m, ParamInfo) {
    m += random_normal<double>(m.rows(), m.cols(), rng, sd);
  };
  if constexpr (std::is_same_v<C, LayerConfig>) {
    visit_layer_params(p, cfg, add);
  } else {
    visit_model_params(p, cfg, add);
  }
}

CheckResult layer_gradcheck(std::uint64_t seed, Arch arch) {
  const bool pro = arch == Arch::Pro;
  Rng rng = make_rng(seed, pro ? kProLayer : kLlamaLayer);
  CheckResult res{pro ? "pro_layer" : "llama_layer", 0, 0.0, 1e-5};
  for (Index c = 0; c < 3; ++c) {
    GateMode gate;
    gate.kind = pro ? GateKind::DataDependent : GateKind::DataIndependent;
    LayerConfig cfg = pro ? pro_layer_config(8, 2, 4, gate) : llama_layer_config(8, 2, 4, gate, /*rope=*/true);
    cfg.rope_theta = 100.0;
    cfg.tiles = {2, 3};
    cfg.backend = c == 0 ? AttentionBackend::Reference : AttentionBackend::Tiled;
    LayerParams<double> p = init_layer_params<double>(cfg, rng);
    jitter(p, cfg, rng, 0.4);
    const Index len = 6;
    Matrix<double> x = random_normal<double>(len, cfg.d_model, rng);
    const Matrix<double> r = random_normal<double>(len, cfg.d_model, rng);
    auto loss = [&] { return attention_loss(layer_fwd(x, p, cfg).y, r); };

    const LayerOutput<double> out = layer_fwd(x, p, cfg);
    LayerGrads<double> g = layer_bwd(out.acts, r, p, cfg);
    res.worst = std::max(res.worst, max_rel_error(g.dx, numeric_grad(x, loss)));
    std::vector<Matrix<double>*> analytic;
    visit_layer_params(g.dparams, cfg, [&](const std::string&, Matrix<double>& m, ParamInfo) { analytic.push_back(&m); });
    std::size_t i = 0;
    visit_layer_params(p, cfg, [&](const std::string&, Matrix<double>& m, ParamInfo) {
      res.worst = std::max(res.worst, max_rel_error(*analytic.at(i++), numeric_grad(m, loss)));
    });
    ++res.cases;
  }
  return res;
}

CheckResult model_gradcheck(std::uint64_t seed) {
  Rng rng = make_rng(seed, kModel);
  CheckResult res{"model", 0, 0.0, 1e-4};
  for (Arch arch : {Arch::Pro, Arch::Llama}) {
    ModelConfig cfg;
    cfg.n_layers = 2;
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.d_head = 4;
    cfg.vocab_size = 5;
    cfg.arch = arch;
    cfg.rope = arch == Arch::Llama;
    cfg.rope_theta = 100.0;
    cfg.tiles = {2, 2};
    ModelParams<double> p = init_model_params<double>(cfg, rng);
    jitter(p, cfg, rng, 0.3);
    const std::vector<Token> tokens{1, 4, 0, 2};
    const std::vector<Token> targets{4, 0, 2, 3};
    auto loss = [&] { return cross_entropy(model_fwd<double>(tokens, p, cfg).logits, targets).loss; };

    const ModelOutput<double> out = model_fwd<double>(tokens, p, cfg);
    const Eigen::VectorXd w = Eigen::VectorXd::Constant(4, 0.25);
    ModelParams<double> g = model_bwd(out.acts, cross_entropy_grad(out.logits, targets, w), p, cfg);
    std::vector<Matrix<double>*> analytic;
    visit_model_params(g, cfg, [&](const std::string&, Matrix<double>& m, ParamInfo) { analytic.push_back(&m); });
    std::size_t i = 0;
    visit_model_params(p, cfg, [&](const std::string&, Matrix<double>& m, ParamInfo) {
      res.worst = std::max(res.worst, max_rel_error(*analytic.at(i++), numeric_grad(m, loss)));
    });
    ++res.cases;
  }
  return res;
}

template <typename T>
CheckResult tiled_forward_equiv(std::uint64_t seed) {
  constexpr bool f32 = std::is_same_v<T, float>;
  Rng rng = make_rng(seed, f32 ? kFwd32 : kFwd64);
  CheckResult res{f32 ? "tiled_fwd_f32" : "tiled_fwd_f64", 0, 0.0, f32 ? 1e-5 : 1e-10};
  for (Index c = 0; c < 40; ++c) {
    const Index len = pick(rng, 1, 257);
    const AttentionInputs<T> in = random_inputs<T>(len, 16, rng);
    const TileConfig tiles{pick_tile(rng, len), pick_tile(rng, len)};
    res.worst = std::max(res.worst, max_abs_error(tiled_fwd(in, tiles).out, fgattn_fwd(in).out));
    ++res.cases;
  }
  return res;
}

template <typename T>
CheckResult tiled_backward_equiv(std::uint64_t seed) {
  constexpr bool f32 = std::is_same_v<T, float>;
  Rng rng = make_rng(seed, f32 ? kBwd32 : kBwd64);
  CheckResult res{f32 ? "tiled_bwd_f32" : "tiled_bwd_f64", 0, 0.0, f32 ? 1e-4 : 1e-8};
  for (Index c = 0; c < 20; ++c) {
    const Index len = pick(rng, 1, 257);
    const AttentionInputs<T> in = random_inputs<T>(len, 16, rng);
    const TileConfig tiles{pick_tile(rng, len), pick_tile(rng, len)};
    const Matrix<T> dout = random_normal<T>(len, 16, rng);
    const TiledForward<T> f = tiled_fwd(in, tiles);
    const AttentionGrads<T> gt = tiled_bwd(in, f.out, f.aux, dout, tiles);
    const AttentionGrads<T> gr = fgattn_bwd(in, fgattn_fwd(in).out, dout);
    res.worst = std::max({res.worst, max_rel_error(gt.dq, gr.dq), max_rel_error(gt.dk, gr.dk),
                          max_rel_error(gt.dv, gr.dv), max_rel_error(gt.dlogf, gr.dlogf)});
    ++res.cases;
  }
  return res;
}

CheckResult gla_equiv(std::uint64_t seed) {
  Rng rng = make_rng(seed, kGla);
  CheckResult res{"gla_recurrent_parallel", 0, 0.0, 1e-10};
  for (Index len : {1, 7, 32, 128}) {
    for (Index c = 0; c < 5; ++c) {
      const gla::Mat q = random_normal<double>(len, 8, rng), k = random_normal<double>(len, 8, rng);
      const gla::Mat v = random_normal<double>(len, 8, rng);
      const gla::Vec f = random_uniform<double>(len, 1, rng, 0.5, 1.0).col(0);
      res.worst = std::max(res.worst, max_rel_error(gla::gla_recurrent(k, q, v, f), gla::gla_parallel(k, q, v, f)));
      ++res.cases;
    }
  }
  return res;
}

// softmax(scale * Q K^T + bias(i, j)) V with the causal mask, straight from
// the definition.
template <typename F>
Matrix<double> biased_softmax_attention(const AttentionInputs<double>& in, F&& bias) {
  const Index len = in.length();
  Matrix<double> s = in.scale * in.q * in.k.transpose();
  for (Index i = 0; i < len; ++i) {
    for (Index j = 0; j < len; ++j) s(i, j) = j > i ? kNegInf<double> : s(i, j) + bias(i, j);
  }
  return row_softmax(s) * in.v;
}

CheckResult reduction_equiv(std::uint64_t seed, bool alibi) {
  Rng rng = make_rng(seed, alibi ? kAlibi : kUnitGate);
  CheckResult res{alibi ? "fixed_gate_alibi" : "unit_gate_softmax", 0, 0.0, 1e-6};
  for (Index c = 0; c < 10; ++c) {
    const Index len = pick(rng, 1, 96);
    AttentionInputs<double> in = random_inputs<double>(len, 16, rng);
    const double slope = alibi ? std::ldexp(1.0, -static_cast<int>(pick(rng, 0, 8))) : 0.0;
    in.logf.setConstant(fixed_gate_from_alibi_slope(slope));
    const Matrix<double> expect =
        biased_softmax_attention(in, [&](Index i, Index j) { return -slope * static_cast<double>(i - j); });
    const TileConfig tiles{pick_tile(rng, len), pick_tile(rng, len)};
    res.worst = std::max({res.worst, max_abs_error(fgattn_fwd(in).out, expect),
                          max_abs_error(tiled_fwd(in, tiles).out, expect)});
    ++res.cases;
  }
  return res;
}

}  // namespace

std::vector<CheckResult> run_gradcheck(std::uint64_t seed) {
  return {core_gradcheck(seed, false), core_gradcheck(seed, true), layer_gradcheck(seed, Arch::Pro),
          layer_gradcheck(seed, Arch::Llama), model_gradcheck(seed)};
}

std::vector<CheckResult> run_equiv(std::uint64_t seed) {
  return {tiled_forward_equiv<float>(seed), tiled_forward_equiv<double>(seed), tiled_backward_equiv<float>(seed),
          tiled_backward_equiv<double>(seed), gla_equiv(seed), reduction_equiv(seed, false),
          reduction_equiv(seed, true)};
}

std::vector<BenchRow> run_bench(const std::vector<Index>& lengths, const std::vector<Index>& tiles,
                                std::uint64_t seed, Index d_head) {
  using Clock = std::chrono::steady_clock;
  auto ms_since = [](Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
  };
  std::vector<BenchRow> rows;
  for (Index len : lengths) {
    Rng rng = make_rng(seed, kBench + static_cast<std::uint64_t>(len));
    const AttentionInputs<float> in = random_inputs<float>(len, d_head, rng);
    scratch::reset();
    auto t0 = Clock::now();
    const Matrix<float> naive = fgattn_fwd(in).out;
    const double naive_ms = ms_since(t0);
    const std::size_t naive_peak = scratch::stats().peak;
    for (Index tile : tiles) {
      scratch::reset();
      t0 = Clock::now();
      const Matrix<float> tiled = tiled_fwd(in, TileConfig{tile, tile}).out;
      rows.push_back({len, tile, naive_peak, scratch::stats().peak, naive_ms, ms_since(t0)});
      if (!(max_abs_error(tiled, naive) <= 1e-4)) throw ContractError("bench: tiled and naive outputs disagree");
    }
  }
  return rows;
}

}  // namespace fox
