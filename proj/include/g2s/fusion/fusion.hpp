#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "g2s/core/layers.hpp"
#include "g2s/dataio/keypoints.hpp"
#include "g2s/moe/moe.hpp"

namespace g2s {

enum class FusionMode { kMoE, kCrossAttention, kConcat };

const char* fusion_mode_name(FusionMode mode);
// Accepts "moe", "xattn" and "concat"; throws ConfigError otherwise.
FusionMode parse_fusion_mode(const std::string& name);

/// One MoE slot of the fusion stage: flat with K experts, or hierarchical
/// with groups x experts_per_group.
struct MoESpec {
  MoEConfig config;
  bool hierarchical = false;
  int groups = 4;
  int experts_per_group = 4;
};

struct PerceiverConfig {
  int latents = 32;
  int blocks = 2;
  int heads = 4;
  bool layer_norm = true;
  bool feedforward = true;
  bool residual = true;
};

struct FusionConfig {
  Index dim = 64;
  Index n_mels = 80;
  int joints = 8;
  int conv_kernel = 5;
  double velocity_scale = 1.0;
  double leaky_slope = 0.01;
  int xattn_heads = 4;
  PerceiverConfig perceiver;
  MoESpec speech_moe;
  MoESpec motion_moe;
  MoESpec style_moe;
  FusionMode mode = FusionMode::kMoE;

  void validate() const;
};

/// Mean over mel frames, then Linear -> LeakyReLU -> Linear to width d.
/// Frame order cannot change the result (the mean sums each column in
/// sorted order).
struct SpeakerEncoder {
  Linear<double> in;
  Linear<double> out;
  double slope = 0.01;

  SpeakerEncoder() = default;
  SpeakerEncoder(Index n_mels, Index dim, double leaky_slope, Rng& rng, const std::string& name);

  // mel: F x n_mels, F >= 1. Returns 1 x d.
  DTensor operator()(const DTensor& mel) const;
  void collect(DParameterRefs& refs);
};

/// Per-frame velocities fps * (K_t - K_{t-1}) with v_0 = v_1, T x 2J.
/// Throws InputError for fewer than two frames.
MatrixD keypoint_velocities(const KeypointSequence& kp);

/// Temporal convolution over rows with replicate padding, so a constant
/// input maps to a constant output.
struct TemporalConv {
  Linear<double> proj;  // [kernel * in x out]
  int kernel = 5;

  TemporalConv() = default;
  TemporalConv(Index in, Index out, int kernel_size, Rng& rng, const std::string& name);

  DTensor operator()(const DTensor& x) const;
  void collect(DParameterRefs& refs);
};

/// Stand-in motion encoder: scaled velocities through two temporal
/// convolutions with a LeakyReLU between them. Output T x d.
struct MotionEncoder {
  TemporalConv conv1;
  TemporalConv conv2;
  double velocity_scale = 1.0;
  double slope = 0.01;

  MotionEncoder() = default;
  MotionEncoder(Index joints, Index dim, int kernel, double scale, double leaky_slope, Rng& rng,
                const std::string& name);

  DTensor operator()(DTape& tape, const KeypointSequence& kp) const;
  DTensor encode_velocities(const DTensor& velocities) const;
  void collect(DParameterRefs& refs);
};

/// Learned latents attend over Linear([M || e_spk broadcast]) through
/// pre-norm cross-attention blocks. Output N x d for any T.
struct PerceiverResampler {
  Linear<double> input_proj;  // 2d -> d
  Parameter<double> latents;  // N x d
  std::vector<LayerNorm<double>> norm_q, norm_kv, norm_ff;
  std::vector<MultiHeadAttention<double>> attn;
  std::vector<FeedForward<double>> ff;
  PerceiverConfig config;

  PerceiverResampler() = default;
  PerceiverResampler(Index dim, const PerceiverConfig& cfg, double leaky_slope, Rng& rng, const std::string& name);

  DTensor operator()(const DTensor& motion, const DTensor& speaker) const;
  void collect(DParameterRefs& refs);
};

// One token per frame: Linear over the row-major flattened joints.
DTensor project_gestures(DTape& tape, const KeypointSequence& kp, const Linear<double>& proj);

struct FusedStyle {
  DTensor z_speech;  // 1 x d
  DTensor z_motion;  // T x d
  DTensor z_style;   // N x d
  DTensor z_total;   // (1 + T + N) x d, token-axis concatenation
  DTensor aux_loss;  // 1 x 1; zero outside MoE mode
  std::vector<RoutingTrace> traces;
};

FusedStyle fuse_styles_moe(const DTensor& spk, const DTensor& motion, const DTensor& style, const StyleMoE& moe_speech,
                           const StyleMoE& moe_motion, const StyleMoE& moe_style, const ForwardContext& ctx);

// z_style = attention of S over [spk || M]; the other parts pass through.
FusedStyle fuse_styles_xattn(const DTensor& spk, const DTensor& motion, const DTensor& style,
                             const MultiHeadAttention<double>& attn);

// A shared Linear mixer over the row concatenation [spk || M || S].
FusedStyle fuse_styles_concat(const DTensor& spk, const DTensor& motion, const DTensor& style,
                              const Linear<double>& mixer);

StyleMoE make_style_moe(Index dim, const MoESpec& spec, Rng& rng, const std::string& name);

struct FusionOutput {
  DTensor speaker;   // e_spk, 1 x d
  DTensor motion;    // M, T x d
  DTensor style;     // S, N x d
  DTensor gestures;  // G, T x d
  FusedStyle fused;
};

/// The full style path: speaker and motion encoders, perceiver, gesture
/// projection and the configured fusion strategy.
class StyleFusion {
 public:
  StyleFusion() = default;
  StyleFusion(const FusionConfig& config, Rng& rng);

  const FusionConfig& config() const { return config_; }

  // mel: reference log-mel, F x n_mels; kp: normalised keypoints.
  FusionOutput operator()(DTape& tape, const MatrixD& mel, const KeypointSequence& kp, const ForwardContext& ctx) const;

  // Same path on tape tensors: mel F x n_mels, unscaled velocities and
  // coordinates T x 2J. Lets input sensitivities be checked.
  FusionOutput forward(const DTensor& mel, const DTensor& velocities, const DTensor& coords,
                       const ForwardContext& ctx) const;

  SpeakerEncoder& speaker_encoder() { return speaker_; }
  MotionEncoder& motion_encoder() { return motion_; }
  PerceiverResampler& perceiver() { return perceiver_; }
  Linear<double>& gesture_projection() { return gesture_; }
  StyleMoE& moe_speech() { return moe_speech_; }
  StyleMoE& moe_motion() { return moe_motion_; }
  StyleMoE& moe_style() { return moe_style_; }

  void collect(DParameterRefs& refs);

 private:
  FusionConfig config_;
  SpeakerEncoder speaker_;
  MotionEncoder motion_;
  PerceiverResampler perceiver_;
  Linear<double> gesture_;
  StyleMoE moe_speech_, moe_motion_, moe_style_;
  MultiHeadAttention<double> xattn_;
  Linear<double> mixer_;
};

/// CSV rows "sample_id,modality,v0,...,v{d-1}" for z_speech, z_motion and
/// z_style, in that order.
void write_embeddings_csv(std::ostream& out, const std::string& sample_id, const FusedStyle& fused);
std::string embeddings_csv_header(Index dim);

}  // namespace g2s
