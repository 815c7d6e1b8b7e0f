#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "g2s/core/layers.hpp"
#include "g2s/fusion/fusion.hpp"

namespace g2s {

struct DecoderConfig {
  int layers = 4;
  Index dim = 64;
  int heads = 4;
  int max_steps = 96;
  Index mel_dim = 80;
  int vocab_size = 16;   // acoustic token codes
  int text_vocab = 96;   // printable ASCII plus unknown
  double stop_threshold = 0.5;
  double temperature = 0.7;
  double cond_drop_prob = 0.1;
  int reduction = 16;                       // mel frames pooled per step
  double frame_hop = 256.0 / 22050.0;       // seconds per mel frame
  double stop_bias_init = -4.0;
  double mel_offset = 0.0;  // the mel head predicts (mel - offset) / scale
  double mel_scale = 1.0;
  double silence_mel = -11.512925464970229;  // ln(1e-5), the log-mel floor
  double leaky_slope = 0.01;

  double step_seconds() const { return reduction * frame_hop; }
  void validate() const;
};

// Printable ASCII 32..126 maps to 1..95; anything else to 0.
std::vector<int> encode_text(std::string_view text);

// Sinusoidal index encoding, n x d.
MatrixD position_encoding(Index n, Index d);

// Sinusoidal encoding of times in seconds (periods 0.1 s to 40 s), n x d.
MatrixD time_encoding(std::span<const double> times, Index d);

/// Teacher-forcing targets at decoder resolution: each step pools
/// `reduction` mel frames (mean); its token is 0 for silence, otherwise
/// 1 + the loudest mel band, capped at vocab - 1.
struct DecoderTargets {
  MatrixD mel;              // steps x mel_dim
  std::vector<int> tokens;  // steps
  double duration = 0.0;    // seconds
  Index steps() const { return mel.rows(); }
};

// Throws InputError for an empty mel and truncates beyond max_steps.
DecoderTargets make_decoder_targets(const MatrixD& mel, double duration, const DecoderConfig& cfg,
                                    double silence_level = -9.0);

struct StopDecision {
  double t_pred = 0.0;
  int steps = 0;
  bool truncated = false;
};

/// t_pred = (first index with p >= threshold, plus one) * hop. Without a
/// crossing the whole sequence is used and `truncated` is set.
StopDecision stop_time(std::span<const double> stop_probs, double threshold, double hop);

// Condition dropout: sampled (training only), or forced either way.
enum class CondDrop { kSample, kForceOn, kForceOff };

struct TeacherForcedOutput {
  DTensor token_logits;  // max_steps x vocab
  DTensor mel;           // max_steps x mel_dim
  DTensor stop_logits;   // max_steps x 1
};

struct DecoderLosses {
  DTensor text;        // token cross-entropy over real steps
  DTensor mel;         // mean L1 over real steps
  DTensor t_expected;  // expected stop time, seconds (1 x 1)
  DTensor duration;    // |t_expected - target duration|
};

struct DecoderOutput {
  MatrixD token_logits;
  MatrixD mel;
  std::vector<double> stop_probs;
  std::vector<int> tokens;
  double t_pred = 0.0;
  bool truncated = false;
};

/// Causal pre-norm transformer over decoder steps with cross-attention into
/// the memory [E_text || G || z_total].
class Decoder {
 public:
  Decoder() = default;
  Decoder(const DecoderConfig& config, Rng& rng);

  const DecoderConfig& config() const { return config_; }
  DecoderConfig& mutable_config() { return config_; }

  // Character embeddings plus index encoding, L x d. Empty text throws.
  DTensor embed_text(DTape& tape, std::span<const int> ids) const;

  bool draw_condition_drop(Rng& rng, bool training, CondDrop mode) const;

  /// Memory rows: text, gesture tokens (plus frame-time encoding), then
  /// z_total (motion rows also time-encoded). With `drop` only the text rows
  /// remain.
  DTensor memory(const DTensor& text, const DTensor& gestures, double fps, const FusedStyle& fused, bool drop) const;

  // Step inputs from the previous target frame and token, padded with
  // silence to max_steps.
  TeacherForcedOutput teacher_forced(const DTensor& memory, const DecoderTargets& targets) const;

  /// Autoregressive decoding until the stop probability crosses the
  /// threshold or max_steps is reached. temperature <= 0 selects argmax.
  DecoderOutput generate(const DTensor& memory, Rng& rng, double temperature) const;

  void collect(DParameterRefs& refs);

 private:
  TeacherForcedOutput run(const DTensor& memory, const MatrixD& prev_mel, std::span<const int> prev_tokens) const;

  struct Block {
    LayerNorm<double> norm_self, norm_cross, norm_ff;
    MultiHeadAttention<double> self_attn, cross_attn;
    FeedForward<double> ff;
  };

  DecoderConfig config_;
  Parameter<double> text_embedding_;   // text_vocab x d
  Parameter<double> token_embedding_;  // (vocab + 1) x d, last row = start token
  Linear<double> prenet_in_, prenet_out_;
  LayerNorm<double> memory_norm_;
  std::vector<Block> blocks_;
  LayerNorm<double> final_norm_;
  Linear<double> token_head_, mel_head_, stop_head_;
};

/// Teacher-forced losses against real steps only; the expected stop time
/// runs over all max_steps. ContractError when the targets exceed the
/// decoder output length or widths differ.
DecoderLosses teacher_forced_losses(const TeacherForcedOutput& out, const DecoderTargets& targets,
                                    const DecoderConfig& cfg);

}  // namespace g2s
