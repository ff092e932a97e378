#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "fox/eval.hpp"

namespace {

using Eigen::VectorXd;
using fox::Index;
using fox::Token;

TEST(PerTokenLoss, Examples) {
  VectorXd a(3), b(3);
  a << 0.5, 1.0, 2.0;
  EXPECT_EQ(fox::per_token_loss({a}), a);
  a.setConstant(1.0);
  b.setConstant(3.0);
  EXPECT_TRUE(fox::per_token_loss({a, b}).isApprox(VectorXd::Constant(3, 2.0)));
  EXPECT_TRUE(fox::per_token_loss({VectorXd::Zero(4)}).isZero(0.0));
  EXPECT_THROW(fox::per_token_loss({}), fox::InputError);
  EXPECT_THROW(fox::per_token_loss({a, VectorXd::Zero(2)}), fox::ShapeError);
}

TEST(Perplexity, ConstantAndBoundaryCases) {
  const VectorXd p = fox::perplexity_curve(VectorXd::Constant(500, std::log(4.0)));
  for (Index i = 0; i < p.size(); ++i) EXPECT_NEAR(p[i], 4.0, 1e-12);
  VectorXd l(3);
  l << 0.0, 1.0, 2.0;
  EXPECT_EQ(fox::perplexity_curve(l)[0], 1.0);
  EXPECT_NEAR(fox::perplexity_curve(l)[2], std::exp(1.0), 1e-15);
}

TEST(Perplexity, DecreasingLossGivesDecreasingPerplexity) {
  VectorXd l(50);
  for (Index i = 0; i < 50; ++i) l[i] = 3.0 / (1.0 + static_cast<double>(i));
  const VectorXd p = fox::perplexity_curve(l);
  for (Index i = 1; i < 50; ++i) EXPECT_LT(p[i], p[i - 1]);
}

TEST(Perplexity, KeepsFallingAfterLossPlateaus) {
  VectorXd l = VectorXd::Constant(200, 1.0);
  l[0] = 2.0;
  const VectorXd p = fox::perplexity_curve(l);
  for (Index i = 2; i < 200; ++i) {
    EXPECT_EQ(l[i], l[i - 1]);
    EXPECT_LT(p[i], p[i - 1]);
  }
}

TEST(Smooth, Examples) {
  VectorXd v(3);
  v << 0, 3, 0;
  const VectorXd s = fox::smooth(v, 3);
  EXPECT_DOUBLE_EQ(s[0], 1.5);
  EXPECT_DOUBLE_EQ(s[1], 1.0);
  EXPECT_DOUBLE_EQ(s[2], 1.5);
  EXPECT_EQ(fox::smooth(v, 1), v);
  EXPECT_TRUE(fox::smooth(VectorXd::Constant(20, 2.5), 101).isApprox(VectorXd::Constant(20, 2.5)));
  EXPECT_THROW(fox::smooth(v, 4), fox::ConfigError);
  EXPECT_THROW(fox::smooth(v, 0), fox::ConfigError);
}

TEST(CopyTask, LayoutAndMask) {
  const auto s = fox::gen_copy_task(5, 40, 8, 16);
  ASSERT_EQ(s.tokens.size(), 40u);
  EXPECT_EQ(s.tokens[8], 14);
  for (int i = 0; i < 8; ++i) {
    EXPECT_LT(s.tokens[i], 14);
    EXPECT_EQ(s.tokens[9 + i], s.tokens[i]);
    EXPECT_EQ(s.loss_mask[9 + i], 1);
  }
  for (int i = 17; i < 40; ++i) EXPECT_EQ(s.tokens[i], 15);
  EXPECT_EQ(std::count(s.loss_mask.begin(), s.loss_mask.end(), 1), 8);
  EXPECT_EQ(fox::gen_copy_task(5, 40, 8, 16).tokens, s.tokens);
  EXPECT_NE(fox::gen_copy_task(6, 40, 8, 16).tokens, s.tokens);
}

TEST(CopyTask, SingleTokenAndErrors) {
  const auto s = fox::gen_copy_task(1, 4, 1, 16);
  EXPECT_EQ(s.tokens[2], s.tokens[0]);
  EXPECT_EQ(std::count(s.loss_mask.begin(), s.loss_mask.end(), 1), 1);
  EXPECT_THROW(fox::gen_copy_task(1, 5, 2, 16), fox::InputError);
  EXPECT_THROW(fox::gen_copy_task(1, 10, 2, 2), fox::InputError);
}

TEST(NeedleTask, DepthBoundaries) {
  fox::NeedleSpec spec;
  spec.haystack_len = 50;
  spec.depth = 0.0;
  auto s = fox::gen_needle_task(spec, 3);
  EXPECT_EQ(s.needle_pos, 0);
  EXPECT_TRUE(s.tokens[0] >= spec.key_begin() && s.tokens[0] < spec.value_begin());
  spec.depth = 1.0;
  s = fox::gen_needle_task(spec, 3);
  EXPECT_EQ(s.needle_pos, 50);
  // needle, then the query key directly
  EXPECT_EQ(s.needle_pos + spec.needle_len(), s.answer_begin - spec.key_len);
  EXPECT_EQ(static_cast<Index>(s.tokens.size()), spec.total_len());
}

TEST(NeedleTask, EasyModeDoublesTheKey) {
  fox::NeedleSpec spec;
  spec.haystack_len = 60;
  spec.depth = 0.4;
  for (bool easy : {true, false}) {
    spec.easy_mode = easy;
    const auto s = fox::gen_needle_task(spec, 9);
    const auto keys = std::count_if(s.tokens.begin(), s.tokens.end(), [&](Token t) {
      return t >= spec.key_begin() && t < spec.value_begin();
    });
    EXPECT_EQ(keys, easy ? 2 * spec.key_len : spec.key_len);
    EXPECT_EQ(s.needle_pos, 24);
    for (Index i = s.answer_begin; i < s.answer_end; ++i) {
      EXPECT_TRUE(spec.is_value(s.tokens[static_cast<std::size_t>(i)]));
      EXPECT_EQ(s.tokens[static_cast<std::size_t>(i)],
                s.tokens[static_cast<std::size_t>(s.needle_pos + (easy ? spec.key_len : 0) + i - s.answer_begin)]);
    }
  }
}

TEST(NeedleTask, AlphabetsStayDisjoint) {
  fox::NeedleSpec spec;
  fox::NeedleTaskStream stream(4, spec);
  for (std::uint64_t i = 0; i < 200; ++i) {
    const auto t = stream.sample(i);
    Index values = 0;
    for (std::size_t j = 0; j < t.tokens.size(); ++j) {
      if (spec.is_value(t.tokens[j])) ++values;
      if (t.loss_mask[j]) {
        EXPECT_TRUE(spec.is_value(t.tokens[j]));
      }
    }
    EXPECT_EQ(values, 2 * spec.value_len);
    EXPECT_EQ(t.tokens, stream.sample(i).tokens);
  }
  spec.n_filler = 30;
  EXPECT_THROW(spec.validate(), fox::InputError);
}

fox::ModelConfig small() {
  fox::ModelConfig cfg;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.d_head = 8;
  cfg.vocab_size = 16;
  return cfg;
}

TEST(NeedleEval, UntrainedModelIsNearChance) {
  auto cfg = small();
  fox::Rng rng(1);
  const auto p = fox::init_model_params<float>(cfg, rng);
  fox::NeedleSpec spec;
  spec.vocab_size = 16;
  spec.n_filler = 8;
  spec.n_keys = 4;
  spec.value_len = 1;
  const auto grid = fox::needle_eval(cfg, p, spec, {32, 64}, {0.0, 0.5, 1.0}, 40, 7);
  ASSERT_EQ(grid.size(), 6u);
  double mean = 0.0;
  for (const auto& c : grid) {
    EXPECT_GE(c.accuracy, 0.0);
    EXPECT_LE(c.accuracy, 1.0);
    mean += c.accuracy / 6.0;
  }
  EXPECT_LT(mean, 0.5);
  EXPECT_EQ(grid[3].length, 64);
  EXPECT_EQ(grid[3].depth, 0.0);
  EXPECT_THROW(fox::needle_eval(cfg, p, spec, {32}, {0.0}, 0, 7), fox::InputError);
}

TEST(EvalReport, ShapesAndAccuracy) {
  auto cfg = small();
  fox::Rng rng(2);
  const auto p = fox::init_model_params<float>(cfg, rng);
  fox::CopyTaskStream stream(1, 20, 4, 16);
  const auto rep = fox::evaluate_per_token_loss(cfg, p, stream, 3, 5);
  EXPECT_EQ(rep.per_token_loss.size(), 19);
  EXPECT_EQ(rep.smoothed.size(), 19);
  EXPECT_TRUE((rep.per_token_loss.array() >= 0.0).all());
  const double acc = fox::masked_token_accuracy(cfg, p, {stream.sample(0), stream.sample(1)});
  EXPECT_GE(acc, 0.0);
  EXPECT_LE(acc, 1.0);
}

}  // namespace
