#pragma once

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "g2s/training/model.hpp"

namespace g2s {

struct Corpus {
  std::vector<TrainSample> train;
  std::vector<TrainSample> test;
  NormStats stats;
};

/// Synthetic corpus from (seed, corpus_size, jitter_std), or the manifest
/// under cfg.corpus. Both are split train/test by split_ratio.
Corpus build_corpus(const TrainConfig& cfg, std::ostream* log = nullptr);

/// Held-out metrics from a teacher-forced pass without condition dropout.
/// The offset and MI use a pitch proxy read off the predicted mel frames
/// (band centre of the loudest band per voiced step).
struct EvalMetrics {
  double cmtd_soft = 0.0;  // mean |t_expected - t_gesture|
  double cmtd_hard = 0.0;  // mean |t_stop - t_gesture|, threshold crossing
  double duration_error = 0.0;  // mean |t_expected - duration|
  double loss = 0.0;            // mean composite objective
  std::optional<double> gesture_offset;
  double mutual_info = 0.0;
};

EvalMetrics evaluate(const Model& model, const std::vector<TrainSample>& samples, const TrainConfig& cfg,
                     CondDrop drop = CondDrop::kForceOff);

struct StepLog {
  int step = 0;  // 1-based
  int epoch = 0;
  LossComponents components;
  double aux = 0.0;
  double total = 0.0;
};

struct EvalLog {
  int step = 0;
  int epoch = 0;
  EvalMetrics metrics;
};

struct RunLog {
  std::vector<StepLog> steps;
  std::vector<EvalLog> evals;
};

struct TrainOptions {
  std::filesystem::path out_dir;  // empty: nothing written
  CondDrop cond_drop = CondDrop::kSample;
  std::ostream* progress = nullptr;
};

struct TrainResult {
  RunLog log;
  EvalMetrics final_eval;
  std::optional<EvalLog> best;  // lowest held-out cmtd_hard
  std::unique_ptr<Model> model;
};

/// Seeded per-epoch shuffling, per-sample tapes on up to thread_budget()
/// workers, gradients summed in sample order, then one Adam step. Writes
/// config.txt, runlog.csv, eval.csv, final.g2sk and best.g2sk into
/// out_dir. A non-finite loss saves last_good.g2sk (the parameters before
/// the update that produced it) and throws DivergenceError.
TrainResult train(const Corpus& corpus, const TrainConfig& cfg, const TrainOptions& options = {});

void write_runlog_csv(const std::filesystem::path& path, const RunLog& log);
void write_eval_csv(const std::filesystem::path& path, const RunLog& log);

struct AlignmentAblation {
  TrainResult without;  // lambda_al = 0
  TrainResult with;     // lambda_al from the config (0.1 if the config has 0)
  std::optional<TrainResult> no_gesture;  // condition dropout forced on
};

/// Two runs that differ only in lambda_al. Writes al0/, al/ (and baseline/)
/// plus alignment_ablation.csv and alignment_epochs.csv under out_dir.
AlignmentAblation ablate_alignment(const Corpus& corpus, const TrainConfig& cfg, const std::filesystem::path& out_dir,
                                   bool with_baseline, std::ostream* progress = nullptr);

struct FusionAblationRow {
  FusionMode mode = FusionMode::kMoE;
  EvalMetrics metrics;
  StepLog last;
};

/// One run per fusion mode with everything else fixed; writes <mode>/ run
/// directories and fusion_ablation.csv.
std::vector<FusionAblationRow> ablate_fusion(const Corpus& corpus, const TrainConfig& cfg,
                                             const std::filesystem::path& out_dir, std::ostream* progress = nullptr);

// Shortest round-trip formatting used in every CSV this module writes.
std::string format_number(double v);

}  // namespace g2s
