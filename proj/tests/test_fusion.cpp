#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "g2s/core/errors.hpp"
#include "g2s/core/ops.hpp"
#include "g2s/fusion/fusion.hpp"

namespace g2s {
namespace {

MatrixD random_matrix(Index r, Index c, Rng& rng) {
  MatrixD m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

KeypointSequence random_pose(Index frames, int joints, Rng& rng) {
  KeypointSequence kp;
  kp.fps = 25.0;
  kp.coords = random_matrix(frames, 2 * joints, rng);
  return kp;
}

FusionConfig small_config(FusionMode mode) {
  FusionConfig c;
  c.dim = 8;
  c.n_mels = 6;
  c.joints = 3;
  c.conv_kernel = 3;
  c.xattn_heads = 2;
  c.perceiver.latents = 4;
  c.perceiver.blocks = 1;
  c.perceiver.heads = 2;
  for (auto* s : {&c.speech_moe, &c.motion_moe, &c.style_moe}) {
    s->config.num_experts = 4;
    s->config.expert_layers = 2;
    s->config.hidden_dim = 8;
  }
  c.mode = mode;
  return c;
}

TEST(Speaker, FramePermutationLeavesTheEmbeddingUnchanged) {
  Rng rng(1);
  const SpeakerEncoder enc(6, 8, 0.01, rng, "spk");
  const MatrixD mel = random_matrix(11, 6, rng);
  const MatrixD shuffled = mel.colwise().reverse();
  DTape t;
  EXPECT_EQ(enc(t.constant(mel)).value(), enc(t.constant(shuffled)).value());
}

TEST(Speaker, EmptyMelIsAnInputError) {
  Rng rng(1);
  const SpeakerEncoder enc(6, 8, 0.01, rng, "spk");
  DTape t;
  EXPECT_THROW(enc(t.constant(MatrixD(0, 6))), InputError);
}

TEST(Motion, DoublingFpsDoublesVelocities) {
  Rng rng(2);
  KeypointSequence kp = random_pose(6, 3, rng);
  const MatrixD v = keypoint_velocities(kp);
  kp.fps *= 2.0;
  EXPECT_LE((keypoint_velocities(kp) - 2.0 * v).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(v.row(0), v.row(1));
}

TEST(Motion, SingleFrameIsAnInputError) {
  Rng rng(2);
  EXPECT_THROW(keypoint_velocities(random_pose(1, 3, rng)), InputError);
}

TEST(Motion, ReplicatePaddingKeepsConstantsConstant) {
  Rng rng(3);
  const TemporalConv conv(4, 5, 5, rng, "c");
  MatrixD x(7, 4);
  x.rowwise() = Eigen::RowVectorXd::LinSpaced(4, -1.0, 2.0);
  DTape t;
  const MatrixD y = conv(t.constant(x)).value();
  for (Index r = 1; r < y.rows(); ++r) EXPECT_LE((y.row(r) - y.row(0)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Motion, EvenKernelIsAConfigError) {
  Rng rng(3);
  EXPECT_THROW(TemporalConv(4, 4, 4, rng, "c"), ConfigError);
}

TEST(Perceiver, OutputHasOneRowPerLatentForAnyLength) {
  Rng rng(4);
  PerceiverConfig pc;
  pc.latents = 5;
  pc.heads = 2;
  const PerceiverResampler p(8, pc, 0.01, rng, "p");
  for (Index T : {1, 3, 40}) {
    DTape t;
    const auto y = p(t.constant(random_matrix(T, 8, rng)), t.constant(random_matrix(1, 8, rng)));
    EXPECT_EQ(y.rows(), 5);
    EXPECT_EQ(y.cols(), 8);
  }
}

TEST(Perceiver, IdenticalInputsMakeTheOutputIndependentOfLength) {
  Rng rng(5);
  PerceiverConfig pc;
  pc.latents = 3;
  pc.heads = 2;
  const PerceiverResampler p(8, pc, 0.01, rng, "p");
  const MatrixD row = random_matrix(1, 8, rng);
  const MatrixD spk = random_matrix(1, 8, rng);
  DTape t;
  const MatrixD short_out = p(t.constant(row.replicate(2, 1)), t.constant(spk)).value();
  const MatrixD long_out = p(t.constant(row.replicate(30, 1)), t.constant(spk)).value();
  EXPECT_LE((short_out - long_out).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Perceiver, BareSingleLatentIsTheAttentionWeightedMean) {
  Rng rng(6);
  const Index d = 4;
  PerceiverConfig pc;
  pc.latents = 1;
  pc.blocks = 1;
  pc.heads = 1;
  pc.layer_norm = false;
  pc.feedforward = false;
  pc.residual = false;
  PerceiverResampler p(d, pc, 0.01, rng, "p");
  p.input_proj.weight.value.setZero();
  p.input_proj.weight.value.topRows(d).setIdentity();
  p.input_proj.bias.value.setZero();
  for (auto* l : {&p.attn[0].wq, &p.attn[0].wk, &p.attn[0].wv, &p.attn[0].wo}) {
    l->weight.value.setIdentity();
    l->bias.value.setZero();
  }
  const MatrixD m = random_matrix(5, d, rng);
  const Eigen::RowVectorXd q = p.latents.value.row(0);
  Eigen::VectorXd w = (m * q.transpose()) / std::sqrt(static_cast<double>(d));
  w = (w.array() - w.maxCoeff()).exp();
  w /= w.sum();
  const Eigen::RowVectorXd expected = w.transpose() * m;
  DTape t;
  const MatrixD y = p(t.constant(m), t.constant(random_matrix(1, d, rng))).value();
  EXPECT_LE((y.row(0) - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Fusion, EveryModeProducesTheSameLayout) {
  for (auto mode : {FusionMode::kMoE, FusionMode::kCrossAttention, FusionMode::kConcat}) {
    Rng rng(7);
    const auto cfg = small_config(mode);
    const StyleFusion f(cfg, rng);
    const KeypointSequence kp = random_pose(9, 3, rng);
    DTape t;
    const auto out = f(t, random_matrix(12, 6, rng), kp, ForwardContext{&rng, true, nullptr, {}});
    EXPECT_EQ(out.fused.z_speech.rows(), 1) << fusion_mode_name(mode);
    EXPECT_EQ(out.fused.z_motion.rows(), 9);
    EXPECT_EQ(out.fused.z_style.rows(), 4);
    EXPECT_EQ(out.fused.z_total.rows(), 1 + 9 + 4);
    EXPECT_EQ(out.fused.z_total.cols(), 8);
    EXPECT_EQ(out.gestures.rows(), 9);
    if (mode != FusionMode::kMoE) EXPECT_EQ(out.fused.aux_loss.item(), 0.0);
    if (mode == FusionMode::kMoE) EXPECT_EQ(out.fused.traces.size(), 3u);
  }
}

TEST(Fusion, WrongJointCountIsAnInputError) {
  Rng rng(8);
  const StyleFusion f(small_config(FusionMode::kMoE), rng);
  DTape t;
  EXPECT_THROW(f(t, random_matrix(4, 6, rng), random_pose(5, 2, rng), ForwardContext{&rng, false, nullptr, {}}),
               InputError);
}

TEST(Fusion, SingleExpertMoEsReduceToDirectComposition) {
  Rng rng(9);
  auto cfg = small_config(FusionMode::kMoE);
  for (auto* s : {&cfg.speech_moe, &cfg.motion_moe, &cfg.style_moe}) {
    s->config.num_experts = 1;
    s->config.top_k = 1;
  }
  StyleFusion f(cfg, rng);
  const KeypointSequence kp = random_pose(6, 3, rng);
  DTape t;
  const auto out = f(t, random_matrix(10, 6, rng), kp, ForwardContext{&rng, true, nullptr, {}});
  const auto direct = concat_rows<double>({f.moe_speech().flat().experts()[0](out.speaker),
                                           f.moe_motion().flat().experts()[0](out.motion),
                                           f.moe_style().flat().experts()[0](out.style)});
  EXPECT_LE((out.fused.z_total.value() - direct.value()).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Fusion, HierarchicalSlotsRun) {
  Rng rng(10);
  auto cfg = small_config(FusionMode::kMoE);
  for (auto* s : {&cfg.speech_moe, &cfg.motion_moe, &cfg.style_moe}) {
    s->hierarchical = true;
    s->groups = 2;
    s->experts_per_group = 2;
  }
  const StyleFusion f(cfg, rng);
  DTape t;
  const auto out = f(t, random_matrix(5, 6, rng), random_pose(4, 3, rng), ForwardContext{&rng, true, nullptr, {}});
  EXPECT_EQ(out.fused.z_total.rows(), 1 + 4 + 4);
  EXPECT_TRUE(out.fused.z_total.value().allFinite());
}

TEST(Fusion, ModeNamesRoundTrip) {
  for (auto mode : {FusionMode::kMoE, FusionMode::kCrossAttention, FusionMode::kConcat}) {
    EXPECT_EQ(parse_fusion_mode(fusion_mode_name(mode)), mode);
  }
  EXPECT_THROW(parse_fusion_mode("sum"), ConfigError);
}

TEST(Fusion, EmbeddingsCsvHasOneRowPerToken) {
  Rng rng(11);
  const StyleFusion f(small_config(FusionMode::kConcat), rng);
  DTape t;
  const auto out = f(t, random_matrix(5, 6, rng), random_pose(3, 3, rng), ForwardContext{&rng, false, nullptr, {}});
  std::ostringstream csv;
  write_embeddings_csv(csv, "s0", out.fused);
  int lines = 0;
  for (char ch : csv.str()) lines += ch == '\n';
  EXPECT_EQ(lines, 1 + 3 + 4);
  EXPECT_EQ(embeddings_csv_header(2), "sample_id,modality,v0,v1\n");
}

}  // namespace
}  // namespace g2s
