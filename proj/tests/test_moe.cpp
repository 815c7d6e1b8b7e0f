#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "g2s/core/ops.hpp"
#include "g2s/moe/moe.hpp"

namespace g2s {
namespace {

MatrixD random_matrix(Index r, Index c, Rng& rng) {
  MatrixD m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

MatrixD softmax_of(const MatrixD& logits) {
  MatrixD p = (logits.colwise() - logits.rowwise().maxCoeff()).array().exp();
  return p.array().colwise() / p.rowwise().sum().array();
}

// Dense reference: y_t = sum over the selected set of p_ti / (sum p) * E_i(x_t).
MatrixD dense_reference(const MatrixD& x, const MoELayer& layer, const RoutingTrace& trace) {
  DTape tape;
  const auto xt = tape.constant(x);
  const MatrixD probs = softmax_rows(layer.gate()(xt)).value();
  MatrixD y = MatrixD::Zero(x.rows(), x.cols());
  for (Index t = 0; t < x.rows(); ++t) {
    const auto& route = trace.tokens[static_cast<std::size_t>(t)];
    double norm = 0.0;
    for (int e : route.experts) norm += probs(t, e);
    for (int e : route.experts) {
      const MatrixD out = layer.experts()[static_cast<std::size_t>(e)](xt).value();
      y.row(t) += probs(t, e) / norm * out.row(t);
    }
  }
  return y;
}

TEST(Routing, TopKWeightsSumToOne) {
  Rng rng(5);
  MoEConfig cfg;
  cfg.num_experts = 8;
  const MatrixD probs = softmax_of(random_matrix(32, 8, rng));
  const auto trace = route_tokens(probs, cfg, 11, true);
  for (const auto& t : trace.tokens) {
    ASSERT_EQ(t.experts.size(), 2u);
    EXPECT_NE(t.experts[0], t.experts[1]);
    EXPECT_NEAR(t.weights[0] + t.weights[1], 1.0, 1e-12);
  }
}

TEST(Routing, InferenceIsDeterministicTopK) {
  MoEConfig cfg;
  cfg.num_experts = 4;
  cfg.top_k = 2;
  MatrixD probs(1, 4);
  probs << 0.1, 0.4, 0.2, 0.3;
  const auto trace = route_tokens(probs, cfg, 0, false);
  EXPECT_EQ(trace.tokens[0].experts, (std::vector<int>{1, 3}));
  EXPECT_NEAR(trace.tokens[0].weights[0], 0.4 / 0.7, 1e-15);
}

TEST(Routing, TopKLargerThanExpertCountIsAConfigError) {
  MoEConfig cfg;
  cfg.num_experts = 1;
  cfg.top_k = 2;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Routing, FallbackSlotFollowsRemainingGateMass) {
  MoEConfig cfg;
  cfg.num_experts = 4;
  cfg.fallback_prob = 1.0;
  const int n = 10000;
  MatrixD probs(n, 4);
  for (Index t = 0; t < n; ++t) probs.row(t) << 0.1, 0.5, 0.25, 0.15;
  const auto trace = route_tokens(probs, cfg, 99, true);
  std::vector<int> hits(4, 0);
  for (const auto& t : trace.tokens) {
    EXPECT_EQ(t.experts[0], 1);
    hits[static_cast<std::size_t>(t.experts[1])] += 1;
  }
  EXPECT_EQ(hits[1], 0);
  for (int e : {0, 2, 3}) {
    const double p = probs(0, e) / 0.5;
    EXPECT_LE(std::abs(hits[static_cast<std::size_t>(e)] - n * p), 3.0 * std::sqrt(n * p * (1 - p))) << e;
  }
}

TEST(Routing, CapacityFormulaAndDrops) {
  MoEConfig cfg;
  cfg.num_experts = 4;
  cfg.capacity_factor = 1.0;
  EXPECT_EQ(expert_capacity(cfg, 10), 5.0);  // ceil(1.0 * 10 * 2 / 4)
  MatrixD probs(6, 4);
  for (Index t = 0; t < 6; ++t) probs.row(t) << 0.7, 0.2, 0.05, 0.05;
  auto trace = route_tokens(probs, cfg, 0, false);
  apply_capacity(trace, 2.0);
  EXPECT_EQ(trace.load[0], 2);
  EXPECT_EQ(trace.load[1], 2);
  EXPECT_EQ(trace.dropped, 8);
  EXPECT_TRUE(trace.tokens[5].passthrough);
  EXPECT_NEAR(trace.tokens[0].weights[0] + trace.tokens[0].weights[1], 1.0, 1e-12);
}

TEST(Routing, UnlimitedCapacityNeverDrops) {
  Rng rng(8);
  MoEConfig cfg;
  cfg.num_experts = 4;
  cfg.capacity_factor = MoEConfig::kUnlimitedCapacity;
  MatrixD logits = random_matrix(64, 4, rng);
  logits.col(0).array() += 10.0;  // everyone prefers expert 0
  auto trace = route_tokens(softmax_of(logits), cfg, 3, true);
  apply_capacity(trace, expert_capacity(cfg, 64));
  EXPECT_EQ(trace.dropped, 0);
}

TEST(MoE, SparseEqualsDenseReference) {
  Rng rng(21);
  for (int K : {4, 8, 16}) {
    MoEConfig cfg;
    cfg.num_experts = K;
    cfg.expert_layers = 4;
    cfg.hidden_dim = 12;
    cfg.capacity_factor = MoEConfig::kUnlimitedCapacity;
    const MoELayer layer(6, cfg, rng, "moe");
    const MatrixD x = random_matrix(9, 6, rng);
    DTape tape;
    ForwardContext ctx{&rng, false, nullptr, {}};
    const auto out = moe_forward(tape.constant(x), layer, ctx);
    const MatrixD ref = dense_reference(x, layer, out.trace);
    EXPECT_LE((out.y.value() - ref).cwiseAbs().maxCoeff(), 1e-9) << "K=" << K;
  }
}

TEST(MoE, SingleExpertIsExactlyTheExpert) {
  Rng rng(4);
  MoEConfig cfg;
  cfg.num_experts = 1;
  cfg.top_k = 1;
  cfg.hidden_dim = 8;
  const MoELayer layer(5, cfg, rng, "one");
  const MatrixD x = random_matrix(7, 5, rng);
  DTape tape;
  const auto xt = tape.constant(x);
  const auto out = moe_forward(xt, layer, ForwardContext{&rng, true, nullptr, {}});
  EXPECT_EQ(out.y.value(), layer.experts()[0](xt).value());
}

TEST(MoE, IdentityExpertsGiveIdentityMap) {
  Rng rng(6);
  MoEConfig cfg;
  cfg.num_experts = 4;
  cfg.capacity_factor = MoEConfig::kUnlimitedCapacity;
  MoELayer layer(3, cfg, rng, "id");
  layer.set_expert_kind(ExpertKind::kIdentity);
  const MatrixD x = random_matrix(5, 3, rng);
  DTape tape;
  const auto out = moe_forward(tape.constant(x), layer, ForwardContext{&rng, false, nullptr, {}});
  EXPECT_LE((out.y.value() - x).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(MoE, BalancedRoutingGivesAuxEqualToWeight) {
  // Zero gate weights: uniform probabilities, and with top_k = K every expert
  // gets the same share, so K * sum f_i P_i = 1.
  Rng rng(2);
  MoEConfig cfg;
  cfg.num_experts = 4;
  cfg.top_k = 4;
  cfg.lb_weight = 0.01;
  MoELayer layer(3, cfg, rng, "bal");
  layer.gate().weight.value.setZero();
  DTape tape;
  const auto out = moe_forward(tape.constant(random_matrix(6, 3, rng)), layer, ForwardContext{&rng, false, nullptr, {}});
  EXPECT_NEAR(out.aux_loss.item(), 0.01, 1e-15);
}

TEST(MoE, RoutingReplayReproducesTrainingSelection) {
  Rng rng(12);
  MoEConfig cfg;
  cfg.num_experts = 8;
  cfg.fallback_prob = 1.0;
  const MoELayer layer(4, cfg, rng, "r");
  const MatrixD x = random_matrix(10, 4, rng);
  RoutingCache cache;
  cache.record();
  Rng a(1);
  DTape t1;
  const auto first = moe_forward(t1.constant(x), layer, ForwardContext{&a, true, &cache, {}});
  cache.replay();
  Rng b(777);  // a different stream: replay must not consult it
  DTape t2;
  const auto second = moe_forward(t2.constant(x), layer, ForwardContext{&b, true, &cache, {}});
  EXPECT_EQ(first.y.value(), second.y.value());
}

TEST(MoE, SameSeedSameRouting) {
  Rng init(3);
  MoEConfig cfg;
  cfg.num_experts = 8;
  const MoELayer layer(4, cfg, init, "d");
  const MatrixD x = random_matrix(16, 4, init);
  auto run = [&] {
    Rng r(42);
    DTape t;
    return moe_forward(t.constant(x), layer, ForwardContext{&r, true, nullptr, {}}).y.value();
  };
  EXPECT_EQ(run(), run());
}

TEST(HierarchicalMoE, OneByOneIsTheSingleExpert) {
  Rng rng(10);
  MoEConfig inner;
  inner.top_k = 1;
  inner.hidden_dim = 6;
  const HierarchicalMoE h(4, 1, 1, inner, rng, "h");
  const MatrixD x = random_matrix(5, 4, rng);
  DTape tape;
  const auto xt = tape.constant(x);
  const auto out = hmoe_forward(xt, h, ForwardContext{&rng, true, nullptr, {}});
  EXPECT_EQ(out.y.value(), h.groups()[0].experts()[0](xt).value());
}

// Gates with zero weights route every token by their biases alone; expert
// (g, e) is a single linear layer c_ge * I, so y = sum_g a_g sum_e b_ge c_ge x.
TEST(HierarchicalMoE, HandSetTwoByTwoIsTheTwoLevelConvexCombination) {
  Rng rng(13);
  MoEConfig inner;
  inner.top_k = 2;
  inner.expert_layers = 1;
  inner.capacity_factor = MoEConfig::kUnlimitedCapacity;
  HierarchicalMoE h(3, 2, 2, inner, rng, "h");
  const double outer_bias[2] = {0.3, -0.4};
  const double inner_bias[2][2] = {{1.0, 0.0}, {-0.5, 0.25}};
  const double c[2][2] = {{2.0, -1.0}, {0.5, 3.0}};
  h.outer_gate().weight.value.setZero();
  h.outer_gate().bias.value << outer_bias[0], outer_bias[1];
  for (int g = 0; g < 2; ++g) {
    auto& group = h.groups()[static_cast<std::size_t>(g)];
    group.gate().weight.value.setZero();
    group.gate().bias.value << inner_bias[g][0], inner_bias[g][1];
    for (int e = 0; e < 2; ++e) {
      auto& fc = group.experts()[static_cast<std::size_t>(e)].layers()[0];
      fc.weight.value = c[g][e] * MatrixD::Identity(3, 3);
      fc.bias.value.setZero();
    }
  }
  auto softmax2 = [](double a, double b) {
    const double ea = std::exp(a), eb = std::exp(b);
    return std::pair{ea / (ea + eb), eb / (ea + eb)};
  };
  const auto [a0, a1] = softmax2(outer_bias[0], outer_bias[1]);
  const auto [b00, b01] = softmax2(inner_bias[0][0], inner_bias[0][1]);
  const auto [b10, b11] = softmax2(inner_bias[1][0], inner_bias[1][1]);
  const double gain = a0 * (b00 * c[0][0] + b01 * c[0][1]) + a1 * (b10 * c[1][0] + b11 * c[1][1]);

  const MatrixD x = random_matrix(4, 3, rng);
  DTape tape;
  const auto out = hmoe_forward(tape.constant(x), h, ForwardContext{&rng, false, nullptr, {}});
  EXPECT_LE((out.y.value() - gain * x).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(HierarchicalMoE, OutputShapeAndGroupSelection) {
  Rng rng(11);
  MoEConfig inner;
  inner.top_k = 2;
  const HierarchicalMoE h(8, 4, 4, inner, rng, "h");
  DTape tape;
  const auto out = hmoe_forward(tape.constant(random_matrix(7, 8, rng)), h, ForwardContext{&rng, false, nullptr, {}});
  EXPECT_EQ(out.y.rows(), 7);
  EXPECT_EQ(out.y.cols(), 8);
  for (const auto& t : out.trace.tokens) {
    EXPECT_LE(t.experts.size(), 2u);
    EXPECT_EQ(std::set<int>(t.experts.begin(), t.experts.end()).size(), t.experts.size());
  }
}

TEST(LoadStats, CoefficientOfVariation) {
  RoutingTrace trace;
  trace.num_experts = 2;
  trace.tokens.resize(3);
  trace.tokens[0].experts = {0};
  trace.tokens[1].experts = {0};
  trace.tokens[2].experts = {1};
  const auto s = load_balance_stats(trace);
  EXPECT_EQ(s.counts, (std::vector<int>{2, 1}));
  EXPECT_NEAR(s.cv, 0.5 / 1.5, 1e-15);
}

}  // namespace
}  // namespace g2s
