#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "g2s/core/rng.hpp"
#include "g2s/dataio/keypoints.hpp"
#include "g2s/dataio/mel.hpp"
#include "g2s/dataio/wav.hpp"

namespace g2s {

struct SynthOptions {
  int joints = 8;
  double fps = 25.0;
  double sample_rate = 22050.0;
  double min_duration = 4.0;
  double max_duration = 15.0;
  int min_apexes = 2;
  int max_apexes = 5;
  double edge_margin = 0.8;   // apexes stay this far from either clip end
  double min_spacing = 0.7;   // between planted apexes
  double bump_width = 0.08;   // Gaussian sigma of motion and pitch bumps, seconds
  double peak_speed = 200.0;  // keypoint speed at an apex, pixels per second
  double words_per_second = 2.2;
  int speakers = 4;
  MelOptions mel;
};

/// One synthetic clip with planted gesture apexes and matching pitch peaks.
/// Apex times lie on the keypoint frame grid; pitch peaks sit at the apex
/// plus N(0, jitter_std).
struct SynthSample {
  std::string id;
  std::string text;
  int speaker = 0;
  double duration = 0.0;
  AudioClip audio;
  MatrixD mel_target;  // F x n_mels log-mel
  KeypointSequence keypoints;
  std::vector<double> apex_times_true;
  std::vector<double> pitch_peak_times_true;
  double t_gesture_true = 0.0;  // final apex
};

// Sample `index` depends only on (seed, index).
SynthSample gen_synthetic_sample(std::uint64_t seed, std::size_t index, double jitter_std,
                                 const SynthOptions& options = {});

/// n samples seeded from one draw of `rng`. Throws ContractError when n < 1 or
/// jitter_std < 0.
std::vector<SynthSample> gen_synthetic_corpus(int n, double jitter_std, Rng& rng, const SynthOptions& options = {});

/// Writes root/<id>/{keypoints.json, audio.wav, transcript.txt, speaker.txt,
/// meta.json} for each sample plus root/metadata.json recording the
/// generator settings.
void write_synthetic_corpus(const std::filesystem::path& root, const std::vector<SynthSample>& samples,
                            double jitter_std, std::uint64_t seed, const SynthOptions& options = {});

}  // namespace g2s
