#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "g2s/dataio/manifest.hpp"
#include "g2s/dataio/synth.hpp"
#include "g2s/training/config.hpp"

namespace g2s {

/// One training example at decoder resolution. `mel` doubles as the speaker
/// reference; `keypoints` are already normalised.
struct TrainSample {
  std::string id;
  std::vector<int> text_ids;
  MatrixD mel;
  KeypointSequence keypoints;
  DecoderTargets targets;
  double duration = 0.0;
  double t_gesture = 0.0;       // final gesture apex, seconds
  std::vector<double> apexes;   // detected apex times, for the held-out metrics
};

TrainSample make_train_sample(const SynthSample& s, const DecoderConfig& cfg);

// Reads keypoints, audio (resampled to 22.05 kHz) and transcript. Throws
// InputError when the clip has no detectable gesture apex.
TrainSample load_train_sample(const CorpusManifest& manifest, const ManifestEntry& entry, const DecoderConfig& cfg);

/// Input and output scaling fitted on the training split and stored with
/// the checkpoint.
struct NormStats {
  double mel_offset = 0.0;
  double mel_scale = 1.0;
  double velocity_scale = 1.0;
};

NormStats fit_norm_stats(const std::vector<TrainSample>& train);

struct ModelForward {
  FusionOutput fusion;
  TeacherForcedOutput decoded;
  DecoderLosses losses;
  DTensor alignment;  // |t_expected - t_gesture|
  DTensor total;      // composite objective for this sample
  LossComponents values;
  double aux = 0.0;
  bool condition_dropped = false;
};

/// Fusion stage plus decoder. Parameters are referenced by address, so the
/// model is neither copyable nor movable.
class Model {
 public:
  Model(const TrainConfig& cfg, const NormStats& stats);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const StyleFusion& fusion() const { return fusion_; }
  const Decoder& decoder() const { return decoder_; }
  StyleFusion& fusion() { return fusion_; }
  Decoder& decoder() { return decoder_; }
  const NormStats& stats() const { return stats_; }

  // Trainable parameters in a fixed order.
  const DParameterRefs& parameters() const { return params_; }

  /// Teacher-forced pass and the composite objective for one sample. The
  /// context supplies routing randomness and the training flag.
  ModelForward forward(DTape& tape, const TrainSample& sample, const ForwardContext& ctx, CondDrop drop,
                       const LossWeights& weights) const;

  // Trainable parameters plus the normalisation statistics.
  void save(const std::filesystem::path& path) const;
  static std::unique_ptr<Model> load(const std::filesystem::path& path, const TrainConfig& cfg);

 private:
  NormStats stats_;
  StyleFusion fusion_;
  Decoder decoder_;
  DParameterRefs params_;
};

}  // namespace g2s
