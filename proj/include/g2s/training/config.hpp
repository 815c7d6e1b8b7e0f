#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "g2s/decoder/decoder.hpp"
#include "g2s/fusion/fusion.hpp"

namespace g2s {

struct LossWeights {
  double lambda_dur = 1.0;
  double lambda_al = 0.1;

  void validate() const;
};

/// Everything a training run depends on. The text form is versioned
/// key = value lines ('#' starts a comment); see README for the key list.
struct TrainConfig {
  static constexpr int kVersion = 1;

  int version = kVersion;
  std::uint64_t seed = 7;
  int steps = 200;  // optimizer updates
  int batch_size = 8;
  double lr = 1e-3;
  LossWeights weights;
  FusionMode fusion = FusionMode::kMoE;

  // Corpus: synthetic unless `corpus` names a directory with a manifest.
  int corpus_size = 200;
  double jitter_std = 0.0;
  double split_ratio = 0.9;
  std::string corpus;

  // Model shape.
  Index d_model = 32;
  int heads = 4;
  int decoder_layers = 2;
  int decoder_steps = 96;
  int reduction = 16;
  int vocab_size = 16;
  int joints = 8;
  Index n_mels = 80;
  int latents = 8;
  int perceiver_blocks = 1;
  int experts = 8;
  int top_k = 2;
  int expert_layers = 4;
  int expert_hidden = 0;
  bool hierarchical = false;
  int groups = 4;
  int experts_per_group = 4;
  double capacity_factor = 1.25;
  double fallback_prob = 0.5;
  double lb_weight = 0.01;
  double cond_drop_prob = 0.1;
  double temperature = 0.7;
  double leaky_slope = 0.01;

  // Evaluate the held-out split every `eval_every` steps (0 = once per epoch).
  int eval_every = 0;

  void validate() const;
  FusionConfig fusion_config() const;
  DecoderConfig decoder_config() const;
};

// Keys that must be present in every config file.
inline constexpr const char* kRequiredConfigKeys[] = {"version", "seed",       "steps",       "batch_size",
                                                      "lr",      "lambda_dur", "lambda_al",   "fusion",
                                                      "corpus_size", "jitter_std", "d_model"};

/// Parses the text form. Missing required keys, unknown keys and malformed
/// values throw InputError naming the key.
TrainConfig parse_config(const std::string& text);
TrainConfig load_config(const std::filesystem::path& path);

// Every key in a fixed order; parse_config(format_config(c)) == c.
std::string format_config(const TrainConfig& cfg);

struct LossComponents {
  double text = 0.0;
  double mel = 0.0;
  double dur = 0.0;
  double al = 0.0;
};

/// text + mel + lambda_dur * dur + lambda_al * al + aux. Throws
/// DivergenceError naming the first non-finite component.
double total_loss(const LossComponents& c, const LossWeights& w, double aux);

}  // namespace g2s
