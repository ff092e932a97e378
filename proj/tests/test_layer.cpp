#include <gtest/gtest.h>

#include <cmath>

#include "fox/layer.hpp"
#include "oracle.hpp"

namespace {

using fox::Index;
using fox::Matrix;

TEST(GateInit, HorizonsAreExactPowers) {
  const auto t = fox::decay_horizons(2.0, 128.0, 4);
  ASSERT_EQ(t.size(), 4u);
  EXPECT_EQ(t[0], 2.0);
  EXPECT_EQ(t[1], 8.0);
  EXPECT_EQ(t[2], 32.0);
  EXPECT_EQ(t[3], 128.0);
  EXPECT_EQ(fox::decay_horizons(3.0, 50.0, 1), std::vector<double>{3.0});
}

TEST(GateInit, BiasDecaysToOneOverEAtTheHorizon) {
  const auto t = fox::decay_horizons(2.0, 128.0, 4);
  const auto b = fox::forget_gate_init(2.0, 128.0, 4);
  for (std::size_t h = 0; h < 4; ++h) {
    EXPECT_NEAR(std::pow(fox::sigmoid(b[h]), t[h]), std::exp(-1.0), 1e-12);
    EXPECT_NEAR(1.0 / -std::log(oracle::sigmoid(b[h])), t[h], 1e-9 * t[h]);
  }
}

TEST(GateInit, InvalidRanges) {
  EXPECT_THROW(fox::forget_gate_init(0.0, 8.0, 2), fox::DomainError);
  EXPECT_THROW(fox::forget_gate_init(16.0, 8.0, 2), fox::DomainError);
  EXPECT_THROW(fox::gate_bias_for_horizon(-1.0), fox::DomainError);
}

TEST(ForgetGates, ModesAndStability) {
  fox::Rng rng(31);
  fox::GateMode mode;
  fox::LayerConfig cfg = fox::pro_layer_config(6, 2, 3, mode);
  auto p = fox::init_layer_params<double>(cfg, rng);
  const Matrix<double> x = fox::random_normal<double>(4, 6, rng);

  mode.kind = fox::GateKind::None;
  auto g = fox::forget_gates(x, mode, p, 2);
  EXPECT_TRUE(g.f.isOnes(0.0));
  EXPECT_TRUE(g.logf.isZero(0.0));

  mode.kind = fox::GateKind::DataDependent;
  p.bf.setConstant(80.0);
  g = fox::forget_gates(x, mode, p, 2);
  EXPECT_TRUE((g.logf.array() <= 0.0).all());
  EXPECT_TRUE((g.logf.array() > -1e-30).all());

  p.bf.setConstant(-80.0);
  g = fox::forget_gates(x, mode, p, 2);
  EXPECT_TRUE(g.logf.allFinite());
  EXPECT_TRUE((g.f.array() < 1e-30).all());

  mode.kind = fox::GateKind::DataIndependent;
  p.bf << 0.0, 1.0;
  g = fox::forget_gates(x, mode, p, 2);
  EXPECT_DOUBLE_EQ(g.f(3, 0), 0.5);
  EXPECT_DOUBLE_EQ(g.f(0, 1), fox::sigmoid(1.0));
}

TEST(KvShift, BoundaryAndBlend) {
  Matrix<double> xt(3, 2), x = Matrix<double>::Zero(3, 1);
  xt << 1, 2, 3, 4, 5, 6;
  fox::Vector<double> w(1);
  w << 0.0;  // alpha = 0.5 everywhere
  const Matrix<double> y = fox::kv_shift<double>(xt, x, w, false, fox::Vector<double>(), 1e-6);
  EXPECT_DOUBLE_EQ(y(0, 0), 0.5);  // previous token taken as zero
  EXPECT_DOUBLE_EQ(y(1, 0), 2.0);
  EXPECT_DOUBLE_EQ(y(2, 1), 5.0);
  Matrix<double> x_big = Matrix<double>::Constant(3, 1, -100.0);
  const Matrix<double> keep = fox::kv_shift<double>(xt, x_big, fox::Vector<double>::Ones(1), false,
                                                    fox::Vector<double>(), 1e-6);
  EXPECT_LT((keep - xt).cwiseAbs().maxCoeff(), 1e-40);
  const Matrix<double> nrm = fox::kv_shift<double>(xt, x, w, true, fox::Vector<double>::Ones(2), 0.0);
  EXPECT_NEAR(nrm.row(1).squaredNorm() / 2.0, 1.0, 1e-14);
}

TEST(LayerConfig, Validation) {
  fox::GateMode gate;
  auto cfg = fox::llama_layer_config(8, 2, 4, gate, false);
  EXPECT_NO_THROW(cfg.validate());
  cfg.features.qk_norm = true;
  EXPECT_THROW(cfg.validate(), fox::ConfigError);
  cfg = fox::llama_layer_config(6, 2, 3, gate, true);
  EXPECT_THROW(cfg.validate(), fox::ConfigError);  // RoPE on an odd head dim
  fox::Rng rng(1);
  auto pcfg = fox::pro_layer_config(8, 2, 4, gate);
  auto p = fox::init_layer_params<double>(pcfg, rng);
  EXPECT_THROW(fox::llama_layer_fwd<double>(Matrix<double>::Zero(2, 8), p, pcfg), fox::ConfigError);
  EXPECT_THROW(fox::pro_layer_fwd<double>(Matrix<double>::Zero(2, 7), p, pcfg), fox::ShapeError);
}

TEST(LayerParams, PresenceAndOptimizerFlags) {
  fox::Rng rng(2);
  fox::GateMode gate;
  gate.kind = fox::GateKind::Fixed;
  auto cfg = fox::llama_layer_config(8, 2, 4, gate, false);
  auto p = fox::init_layer_params<double>(cfg, rng);
  std::vector<std::string> names;
  bool bf_frozen = false;
  fox::visit_layer_params(p, cfg, [&](const std::string& n, const Matrix<double>&, fox::ParamInfo info) {
    names.push_back(n);
    if (n == "bf") bf_frozen = info.frozen && !info.decay;
  });
  EXPECT_EQ(names, (std::vector<std::string>{"wq", "wk", "wv", "wo", "bf"}));
  EXPECT_TRUE(bf_frozen);
  const auto b = fox::forget_gate_init(2.0, 128.0, 2);
  EXPECT_DOUBLE_EQ(p.bf(1, 0), b[1]);

  gate.kind = fox::GateKind::DataDependent;
  p = fox::init_layer_params<double>(fox::pro_layer_config(8, 2, 4, gate), rng);
  EXPECT_TRUE(p.bf.isZero(0.0));
  gate.bias_init = fox::GateBiasInit::Horizons;
  p = fox::init_layer_params<double>(fox::pro_layer_config(8, 2, 4, gate), rng);
  EXPECT_DOUBLE_EQ(p.bf(0, 0), b[0]);
}

oracle::ProWeights to_oracle(const fox::LayerParams<double>& p, int heads, int d_head) {
  oracle::ProWeights w;
  w.heads = heads;
  w.d_head = d_head;
  w.wq = p.wq;
  w.wk = p.wk;
  w.wv = p.wv;
  w.wo = p.wo;
  w.wg = p.wg;
  w.shift_k = p.shift_k;
  w.shift_v = p.shift_v;
  w.wf = p.wf;
  w.bf = p.bf.col(0);
  w.q_norm = p.q_norm;
  w.k_norm = p.k_norm;
  w.o_norm = p.o_norm;
  return w;
}

void jitter(fox::LayerParams<double>& p, const fox::LayerConfig& cfg, fox::Rng& rng, double sd) {
  fox::visit_layer_params(p, cfg, [&](const std::string&, Matrix<double>& m, fox::ParamInfo) {
    m += fox::random_normal<double>(m.rows(), m.cols(), rng, sd);
  });
}

TEST(ProLayer, MatchesStraightLineOracle) {
  fox::Rng rng(33);
  fox::GateMode gate;
  for (auto backend : {fox::AttentionBackend::Reference, fox::AttentionBackend::Tiled}) {
    auto cfg = fox::pro_layer_config(12, 3, 4, gate);
    cfg.backend = backend;
    cfg.tiles = {3, 2};
    auto p = fox::init_layer_params<double>(cfg, rng);
    jitter(p, cfg, rng, 0.5);
    const Matrix<double> x = fox::random_normal<double>(10, 12, rng);
    const Matrix<double> y = fox::pro_layer_fwd(x, p, cfg).y;
    EXPECT_LT(oracle::rel_err(y, oracle::pro_layer(x, to_oracle(p, 3, 4), cfg.norm_eps)), 1e-12);
  }
}

TEST(ProLayer, CausalInTheInput) {
  fox::Rng rng(34);
  auto cfg = fox::pro_layer_config(8, 2, 4, fox::GateMode{});
  auto p = fox::init_layer_params<double>(cfg, rng);
  jitter(p, cfg, rng, 0.5);
  Matrix<double> x = fox::random_normal<double>(9, 8, rng);
  const Matrix<double> y0 = fox::layer_fwd(x, p, cfg).y;
  x.row(5) += fox::random_normal<double>(1, 8, rng);
  const Matrix<double> y1 = fox::layer_fwd(x, p, cfg).y;
  EXPECT_EQ(y0.topRows(5), y1.topRows(5));
  EXPECT_NE(y0.row(5), y1.row(5));
}

double layer_loss(const fox::LayerConfig& cfg, const Matrix<double>& x, const fox::LayerParams<double>& p,
                  const Matrix<double>& r) {
  return (fox::layer_fwd(x, p, cfg).y.array() * r.array()).sum();
}

void check_layer_gradients(fox::LayerConfig cfg, std::uint64_t seed, double tol) {
  fox::Rng rng(seed);
  auto p = fox::init_layer_params<double>(cfg, rng);
  jitter(p, cfg, rng, 0.4);
  Matrix<double> x = fox::random_normal<double>(5, cfg.d_model, rng);
  const Matrix<double> r = fox::random_normal<double>(5, cfg.d_model, rng);
  auto loss = [&] { return layer_loss(cfg, x, p, r); };
  const auto out = fox::layer_fwd(x, p, cfg);
  auto g = fox::layer_bwd(out.acts, r, p, cfg);
  EXPECT_LT(oracle::rel_err(g.dx, oracle::gradient(x, loss)), tol);
  std::vector<std::pair<std::string, Matrix<double>*>> an;
  fox::visit_layer_params(g.dparams, cfg, [&](const std::string& n, Matrix<double>& m, fox::ParamInfo) {
    an.emplace_back(n, &m);
  });
  std::size_t i = 0;
  fox::visit_layer_params(p, cfg, [&](const std::string& n, Matrix<double>& m, fox::ParamInfo info) {
    const Matrix<double>& got = *an.at(i++).second;
    if (info.frozen) {
      EXPECT_TRUE(got.isZero(0.0)) << n;  // frozen tensors report no gradient
      return;
    }
    EXPECT_LT(oracle::rel_err(got, oracle::gradient(m, loss)), tol) << n;
  });
}

TEST(LayerGradients, ProAllGateModes) {
  for (auto kind : {fox::GateKind::DataDependent, fox::GateKind::DataIndependent, fox::GateKind::Fixed,
                    fox::GateKind::None}) {
    fox::GateMode gate;
    gate.kind = kind;
    auto cfg = fox::pro_layer_config(8, 2, 4, gate);
    cfg.tiles = {2, 3};
    check_layer_gradients(cfg, 40 + static_cast<int>(kind), 1e-5);
  }
}

TEST(LayerGradients, ProFeatureSubsets) {
  for (int mask = 0; mask < 16; ++mask) {
    auto cfg = fox::pro_layer_config(8, 2, 4, fox::GateMode{});
    cfg.features = {bool(mask & 1), bool(mask & 2), bool(mask & 4), bool(mask & 8)};
    cfg.backend = mask % 2 ? fox::AttentionBackend::Tiled : fox::AttentionBackend::Reference;
    check_layer_gradients(cfg, 50 + mask, 1e-5);
  }
}

TEST(LayerGradients, LlamaWithRope) {
  auto cfg = fox::llama_layer_config(8, 2, 4, fox::GateMode{}, true);
  cfg.rope_theta = 50.0;
  check_layer_gradients(cfg, 70, 1e-5);
}

TEST(LayerGradients, CappedGatesStopGradient) {
  auto cfg = fox::pro_layer_config(8, 2, 4, fox::GateMode{});
  cfg.logf_cap = -1.0;
  check_layer_gradients(cfg, 71, 1e-5);

  fox::Rng rng(72);
  auto p = fox::init_layer_params<double>(cfg, rng);
  const Matrix<double> x = fox::random_normal<double>(5, 8, rng);
  const auto out = fox::layer_fwd(x, p, cfg);
  EXPECT_TRUE((out.acts.logf.array() <= -1.0).all());
  // At init every gate sits near log(0.5) > -1, so all are capped.
  const auto g = fox::layer_bwd(out.acts, fox::random_normal<double>(5, 8, rng), p, cfg);
  EXPECT_TRUE(g.dparams.wf.isZero(0.0));
  EXPECT_TRUE(g.dparams.bf.isZero(0.0));
}

}  // namespace
