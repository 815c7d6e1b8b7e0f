#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "g2s/core/errors.hpp"
#include "g2s/training/trainer.hpp"

namespace fs = std::filesystem;

namespace g2s {
namespace {

TrainConfig tiny_config() {
  TrainConfig c;
  c.seed = 3;
  c.steps = 4;
  c.batch_size = 2;
  c.corpus_size = 6;
  c.split_ratio = 2.0 / 3.0;
  c.d_model = 8;
  c.heads = 2;
  c.decoder_layers = 1;
  c.decoder_steps = 48;
  c.reduction = 32;
  c.latents = 2;
  c.experts = 2;
  c.top_k = 2;
  c.expert_layers = 1;
  c.eval_every = 2;
  return c;
}

const Corpus& tiny_corpus() {
  static const Corpus corpus = build_corpus(tiny_config());
  return corpus;
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("g2s_training_" + name);
  fs::remove_all(dir);
  return dir;
}

TEST(Loss, WeightedSumOfComponents) {
  const LossComponents c{1.0, 2.0, 3.0, 4.0};
  EXPECT_DOUBLE_EQ(total_loss(c, LossWeights{0.5, 0.1}, 0.0), 4.9);
  const double base = total_loss(c, LossWeights{0.5, 0.0}, 0.0);
  const double once = total_loss(c, LossWeights{0.5, 0.1}, 0.0) - base;
  const double twice = total_loss(c, LossWeights{0.5, 0.2}, 0.0) - base;
  EXPECT_NEAR(twice, 2.0 * once, 1e-15);
}

TEST(Loss, NonFiniteComponentIsADivergence) {
  LossComponents c{1.0, 2.0, 3.0, 4.0};
  c.dur = std::nan("");
  try {
    total_loss(c, LossWeights{}, 0.0);
    FAIL();
  } catch (const DivergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("dur"), std::string::npos);
  }
}

TEST(Config, FormatParseRoundTrip) {
  TrainConfig c = tiny_config();
  c.lr = 0.1 + 0.2;
  c.capacity_factor = std::numeric_limits<double>::infinity();
  c.fusion = FusionMode::kConcat;
  const auto back = parse_config(format_config(c));
  EXPECT_EQ(format_config(back), format_config(c));
  EXPECT_EQ(back.lr, c.lr);
  EXPECT_EQ(back.fusion, FusionMode::kConcat);
  EXPECT_TRUE(std::isinf(back.capacity_factor));
}

TEST(Config, MissingRequiredKeyIsNamed) {
  std::string text = format_config(tiny_config());
  const auto at = text.find("lambda_al");
  text.erase(at, text.find('\n', at) - at + 1);
  try {
    parse_config(text);
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("'lambda_al'"), std::string::npos) << e.what();
  }
}

TEST(Config, UnknownRepeatedAndMalformedKeysAreInputErrors) {
  const std::string base = format_config(tiny_config());
  EXPECT_THROW(parse_config(base + "colour = blue\n"), InputError);
  EXPECT_THROW(parse_config(base + "seed = 4\n"), InputError);
  std::string bad = base;
  bad.replace(bad.find("steps = 4"), 9, "steps = four");
  EXPECT_THROW(parse_config(bad), InputError);
  std::string invalid = base;
  invalid.replace(invalid.find("heads = 2"), 9, "heads = 3");
  EXPECT_THROW(parse_config(invalid), InputError);
}

TEST(Config, CommentsAndBlankLinesAreIgnored) {
  const auto c = parse_config("# toy\n\n" + format_config(tiny_config()) + "  # trailing\n");
  EXPECT_EQ(c.seed, 3u);
}

TEST(Corpus, SyntheticSplitFollowsTheRatio) {
  EXPECT_EQ(tiny_corpus().train.size(), 4u);
  EXPECT_EQ(tiny_corpus().test.size(), 2u);
  EXPECT_GT(tiny_corpus().stats.mel_scale, 0.0);
}

TEST(Training, TotalReconstructsFromComponents) {
  const auto cfg = tiny_config();
  const auto r = train(tiny_corpus(), cfg);
  ASSERT_EQ(r.log.steps.size(), 4u);
  for (const auto& s : r.log.steps) {
    const auto& c = s.components;
    const double rebuilt =
        c.text + c.mel + cfg.weights.lambda_dur * c.dur + cfg.weights.lambda_al * c.al + s.aux;
    EXPECT_NEAR(s.total, rebuilt, 1e-9);
  }
  EXPECT_EQ(r.log.evals.size(), 2u);
}

TEST(Training, SameSeedSameRunLog) {
  const auto cfg = tiny_config();
  const auto a = train(tiny_corpus(), cfg);
  const auto b = train(tiny_corpus(), cfg);
  ASSERT_EQ(a.log.steps.size(), b.log.steps.size());
  for (std::size_t i = 0; i < a.log.steps.size(); ++i) EXPECT_EQ(a.log.steps[i].total, b.log.steps[i].total);
  EXPECT_EQ(a.final_eval.cmtd_hard, b.final_eval.cmtd_hard);
}

TEST(Training, ZeroLearningRateLeavesParametersBitIdentical) {
  auto cfg = tiny_config();
  cfg.lr = 0.0;
  cfg.steps = 2;
  const auto r = train(tiny_corpus(), cfg);
  const Model fresh(cfg, tiny_corpus().stats);
  const auto& p = r.model->parameters();
  const auto& q = fresh.parameters();
  ASSERT_EQ(p.size(), q.size());
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_EQ(p[i]->value, q[i]->value) << p[i]->name;
}

TEST(Training, CheckpointRoundTripGivesIdenticalHeldOutLosses) {
  const auto cfg = tiny_config();
  const auto dir = scratch("ckpt");
  TrainOptions opt;
  opt.out_dir = dir;
  const auto r = train(tiny_corpus(), cfg, opt);
  for (const char* f : {"config.txt", "runlog.csv", "eval.csv", "final.g2sk", "best.g2sk"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
  const auto loaded = Model::load(dir / "final.g2sk", cfg);
  const auto a = evaluate(*r.model, tiny_corpus().test, cfg);
  const auto b = evaluate(*loaded, tiny_corpus().test, cfg);
  EXPECT_EQ(a.loss, b.loss);
  EXPECT_EQ(a.cmtd_soft, b.cmtd_soft);
  EXPECT_EQ(a.duration_error, b.duration_error);
  EXPECT_EQ(load_config(dir / "config.txt").seed, cfg.seed);
}

TEST(Training, ForcedConditionDropMakesOutputsIgnoreGestures) {
  const auto cfg = tiny_config();
  TrainOptions opt;
  opt.cond_drop = CondDrop::kForceOn;
  const auto r = train(tiny_corpus(), cfg, opt);
  TrainSample a = tiny_corpus().test[0];
  TrainSample b = a;
  b.keypoints.coords = b.keypoints.coords.reverse().eval();
  b.t_gesture = a.t_gesture + 1.0;
  auto run = [&](const TrainSample& s) {
    DTape tape;
    Rng rng(1);
    return r.model->forward(tape, s, ForwardContext{&rng, false, nullptr, {}}, CondDrop::kForceOn, cfg.weights)
        .decoded.mel.value();
  };
  EXPECT_EQ(run(a), run(b));
}

TEST(Training, NonFiniteInputAbortsWithLastGoodCheckpoint) {
  const auto cfg = tiny_config();
  Corpus corpus = tiny_corpus();
  for (auto& s : corpus.train) s.mel(0, 0) = std::nan("");
  const auto dir = scratch("diverge");
  TrainOptions opt;
  opt.out_dir = dir;
  EXPECT_THROW(train(corpus, cfg, opt), DivergenceError);
  EXPECT_TRUE(fs::exists(dir / "last_good.g2sk"));
  EXPECT_TRUE(fs::exists(dir / "runlog.csv"));
}

TEST(Ablation, FusionModesShareOneCsvSchema) {
  auto cfg = tiny_config();
  cfg.steps = 2;
  const auto dir = scratch("fusion");
  const auto rows = ablate_fusion(tiny_corpus(), cfg, dir);
  ASSERT_EQ(rows.size(), 3u);
  std::ifstream in(dir / "fusion_ablation.csv");
  std::string line;
  std::getline(in, line);
  const auto columns = std::count(line.begin(), line.end(), ',');
  int n = 0;
  while (std::getline(in, line)) {
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), columns);
    ++n;
  }
  EXPECT_EQ(n, 3);
}

TEST(Ablation, AlignmentRunsShareTheirInitialisation) {
  auto cfg = tiny_config();
  cfg.steps = 2;
  const auto dir = scratch("alignment");
  const auto ab = ablate_alignment(tiny_corpus(), cfg, dir, false);
  const auto& s0 = ab.without.log.steps.front().components;
  const auto& s1 = ab.with.log.steps.front().components;
  EXPECT_EQ(s0.text, s1.text);
  EXPECT_EQ(s0.mel, s1.mel);
  EXPECT_EQ(s0.al, s1.al);
  EXPECT_TRUE(fs::exists(dir / "alignment_ablation.csv"));
  EXPECT_TRUE(fs::exists(dir / "alignment_epochs.csv"));
}

}  // namespace
}  // namespace g2s
