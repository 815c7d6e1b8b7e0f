#include "g2s/fusion/fusion.hpp"

#include <algorithm>
#include <cstdio>

namespace g2s {

const char* fusion_mode_name(FusionMode mode) {
  switch (mode) {
    case FusionMode::kMoE:
      return "moe";
    case FusionMode::kCrossAttention:
      return "xattn";
    case FusionMode::kConcat:
      return "concat";
  }
  return "moe";
}

FusionMode parse_fusion_mode(const std::string& name) {
  if (name == "moe") return FusionMode::kMoE;
  if (name == "xattn") return FusionMode::kCrossAttention;
  if (name == "concat") return FusionMode::kConcat;
  throw ConfigError("unknown fusion mode '" + name + "' (expected moe, xattn or concat)");
}

void FusionConfig::validate() const {
  if (dim < 1 || n_mels < 1 || joints < 1) throw ConfigError("fusion widths must be positive");
  if (conv_kernel < 1 || conv_kernel % 2 == 0) throw ConfigError("conv_kernel must be a positive odd number");
  if (perceiver.latents < 1 || perceiver.blocks < 1) throw ConfigError("perceiver needs >= 1 latent and block");
  if (dim % perceiver.heads != 0 || dim % xattn_heads != 0) throw ConfigError("dim must be divisible by attention heads");
  for (const auto* s : {&speech_moe, &motion_moe, &style_moe}) s->config.validate();
}

// --- Speaker ----------------------------------------------------------------

SpeakerEncoder::SpeakerEncoder(Index n_mels, Index dim, double leaky_slope, Rng& rng, const std::string& name)
    : in(n_mels, dim, rng, name + ".in"), out(dim, dim, rng, name + ".out"), slope(leaky_slope) {}

DTensor SpeakerEncoder::operator()(const DTensor& mel) const {
  if (mel.rows() == 0) throw InputError("speaker encoder: empty mel spectrogram");
  if (mel.cols() != in.in_dim()) throw ShapeError("speaker encoder: mel width does not match n_mels");
  return out(leaky_relu(in(mean_rows(mel)), slope));
}

void SpeakerEncoder::collect(DParameterRefs& refs) {
  in.collect(refs);
  out.collect(refs);
}

// --- Motion -----------------------------------------------------------------

MatrixD keypoint_velocities(const KeypointSequence& kp) {
  if (kp.frames() < 2) throw InputError("motion encoder needs at least 2 frames, got " + std::to_string(kp.frames()));
  MatrixD v(kp.frames(), kp.coords.cols());
  for (Index t = 1; t < kp.frames(); ++t) v.row(t) = kp.fps * (kp.coords.row(t) - kp.coords.row(t - 1));
  v.row(0) = v.row(1);
  return v;
}

TemporalConv::TemporalConv(Index in, Index out, int kernel_size, Rng& rng, const std::string& name)
    : proj(kernel_size * in, out, rng, name), kernel(kernel_size) {
  if (kernel_size < 1 || kernel_size % 2 == 0) throw ConfigError("temporal kernel must be odd");
}

DTensor TemporalConv::operator()(const DTensor& x) const {
  const Index T = x.rows();
  const int half = kernel / 2;
  std::vector<DTensor> taps;
  std::vector<Index> idx(static_cast<std::size_t>(T));
  for (int o = -half; o <= half; ++o) {
    for (Index t = 0; t < T; ++t) idx[static_cast<std::size_t>(t)] = std::clamp<Index>(t + o, 0, T - 1);
    taps.push_back(gather_rows(x, std::span<const Index>(idx)));
  }
  return proj(taps.size() == 1 ? taps[0] : concat_cols(taps));
}

void TemporalConv::collect(DParameterRefs& refs) { proj.collect(refs); }

MotionEncoder::MotionEncoder(Index joints, Index dim, int kernel, double scale, double leaky_slope, Rng& rng,
                             const std::string& name)
    : conv1(2 * joints, dim, kernel, rng, name + ".conv1"),
      conv2(dim, dim, kernel, rng, name + ".conv2"),
      velocity_scale(scale),
      slope(leaky_slope) {}

DTensor MotionEncoder::encode_velocities(const DTensor& velocities) const {
  return conv2(leaky_relu(conv1(velocities), slope));
}

DTensor MotionEncoder::operator()(DTape& tape, const KeypointSequence& kp) const {
  if (kp.joints() * 2 != conv1.proj.in_dim() / conv1.kernel) {
    throw InputError("motion encoder expects " + std::to_string(conv1.proj.in_dim() / conv1.kernel / 2) +
                     " joints, got " + std::to_string(kp.joints()));
  }
  return encode_velocities(tape.constant(velocity_scale * keypoint_velocities(kp)));
}

void MotionEncoder::collect(DParameterRefs& refs) {
  conv1.collect(refs);
  conv2.collect(refs);
}

// --- Perceiver --------------------------------------------------------------

PerceiverResampler::PerceiverResampler(Index dim, const PerceiverConfig& cfg, double leaky_slope, Rng& rng,
                                       const std::string& name)
    : input_proj(2 * dim, dim, rng, name + ".input"), config(cfg) {
  latents = Parameter<double>(name + ".latents", normal_init<double>(cfg.latents, dim, 0.5, rng));
  for (int b = 0; b < cfg.blocks; ++b) {
    const std::string p = name + ".block" + std::to_string(b);
    norm_q.emplace_back(dim, p + ".norm_q");
    norm_kv.emplace_back(dim, p + ".norm_kv");
    norm_ff.emplace_back(dim, p + ".norm_ff");
    attn.emplace_back(dim, cfg.heads, rng, p + ".attn");
    ff.emplace_back(dim, 2 * dim, rng, p + ".ff", leaky_slope);
  }
}

DTensor PerceiverResampler::operator()(const DTensor& motion, const DTensor& speaker) const {
  const Index d = input_proj.out_dim();
  if (motion.cols() != d || speaker.cols() != d || speaker.rows() != 1) {
    throw ConfigError("perceiver: motion and speaker widths must equal d=" + std::to_string(d));
  }
  auto& tape = motion.tape();
  const std::vector<Index> zeros(static_cast<std::size_t>(motion.rows()), 0);
  const auto inputs = input_proj(concat_cols<double>({motion, gather_rows(speaker, std::span<const Index>(zeros))}));
  DTensor x = tape.parameter(latents);
  for (std::size_t b = 0; b < attn.size(); ++b) {
    const auto q = config.layer_norm ? norm_q[b](x) : x;
    const auto kv = config.layer_norm ? norm_kv[b](inputs) : inputs;
    const auto a = attn[b](q, kv, kv);
    x = config.residual ? x + a : a;
    if (config.feedforward) x = x + ff[b](config.layer_norm ? norm_ff[b](x) : x);
  }
  return x;
}

void PerceiverResampler::collect(DParameterRefs& refs) {
  input_proj.collect(refs);
  refs.push_back(&latents);
  for (std::size_t b = 0; b < attn.size(); ++b) {
    norm_q[b].collect(refs);
    norm_kv[b].collect(refs);
    norm_ff[b].collect(refs);
    attn[b].collect(refs);
    ff[b].collect(refs);
  }
}

// --- Gestures and fusion ----------------------------------------------------

DTensor project_gestures(DTape& tape, const KeypointSequence& kp, const Linear<double>& proj) {
  if (kp.coords.cols() != proj.in_dim()) {
    throw InputError("gesture projection expects " + std::to_string(proj.in_dim() / 2) + " joints, got " +
                     std::to_string(kp.joints()));
  }
  return proj(tape.constant(kp.coords));
}

namespace {

FusedStyle assemble(DTensor spk, DTensor motion, DTensor style, DTensor aux) {
  FusedStyle f;
  f.z_speech = spk;
  f.z_motion = motion;
  f.z_style = style;
  f.z_total = concat_rows<double>({spk, motion, style});
  f.aux_loss = aux;
  return f;
}

void require_width(const DTensor& spk, const DTensor& motion, const DTensor& style) {
  if (spk.cols() != motion.cols() || spk.cols() != style.cols()) throw ConfigError("fusion inputs differ in width");
  if (spk.rows() != 1) throw ShapeError("speaker embedding must be a single row");
}

}  // namespace

FusedStyle fuse_styles_moe(const DTensor& spk, const DTensor& motion, const DTensor& style, const StyleMoE& moe_speech,
                           const StyleMoE& moe_motion, const StyleMoE& moe_style, const ForwardContext& ctx) {
  require_width(spk, motion, style);
  auto a = moe_speech(spk, ctx);
  auto b = moe_motion(motion, ctx);
  auto c = moe_style(style, ctx);
  auto f = assemble(a.y, b.y, c.y, a.aux_loss + b.aux_loss + c.aux_loss);
  f.traces = {std::move(a.trace), std::move(b.trace), std::move(c.trace)};
  return f;
}

FusedStyle fuse_styles_xattn(const DTensor& spk, const DTensor& motion, const DTensor& style,
                             const MultiHeadAttention<double>& attn) {
  require_width(spk, motion, style);
  const auto kv = concat_rows<double>({spk, motion});
  return assemble(spk, motion, attn(style, kv, kv), spk.tape().constant(MatrixD::Zero(1, 1)));
}

FusedStyle fuse_styles_concat(const DTensor& spk, const DTensor& motion, const DTensor& style,
                              const Linear<double>& mixer) {
  require_width(spk, motion, style);
  const auto mixed = mixer(concat_rows<double>({spk, motion, style}));
  FusedStyle f;
  f.z_speech = slice_rows(mixed, 0, 1);
  f.z_motion = slice_rows(mixed, 1, motion.rows());
  f.z_style = slice_rows(mixed, 1 + motion.rows(), style.rows());
  f.z_total = mixed;
  f.aux_loss = spk.tape().constant(MatrixD::Zero(1, 1));
  return f;
}

StyleMoE make_style_moe(Index dim, const MoESpec& spec, Rng& rng, const std::string& name) {
  if (spec.hierarchical) return StyleMoE(HierarchicalMoE(dim, spec.groups, spec.experts_per_group, spec.config, rng, name));
  return StyleMoE(MoELayer(dim, spec.config, rng, name));
}

StyleFusion::StyleFusion(const FusionConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  const Index d = config_.dim;
  speaker_ = SpeakerEncoder(config_.n_mels, d, config_.leaky_slope, rng, "fusion.speaker");
  motion_ = MotionEncoder(config_.joints, d, config_.conv_kernel, config_.velocity_scale, config_.leaky_slope, rng,
                          "fusion.motion");
  perceiver_ = PerceiverResampler(d, config_.perceiver, config_.leaky_slope, rng, "fusion.perceiver");
  gesture_ = Linear<double>(2 * config_.joints, d, rng, "fusion.gesture");
  // Mode-specific parts draw from a child stream so the shared parts above
  // are initialised identically in every mode.
  Rng sub = rng.split(static_cast<std::uint64_t>(config_.mode));
  switch (config_.mode) {
    case FusionMode::kMoE:
      moe_speech_ = make_style_moe(d, config_.speech_moe, sub, "fusion.moe_speech");
      moe_motion_ = make_style_moe(d, config_.motion_moe, sub, "fusion.moe_motion");
      moe_style_ = make_style_moe(d, config_.style_moe, sub, "fusion.moe_style");
      break;
    case FusionMode::kCrossAttention:
      xattn_ = MultiHeadAttention<double>(d, config_.xattn_heads, sub, "fusion.xattn");
      break;
    case FusionMode::kConcat:
      mixer_ = Linear<double>(d, d, sub, "fusion.mixer");
      break;
  }
}

FusionOutput StyleFusion::operator()(DTape& tape, const MatrixD& mel, const KeypointSequence& kp,
                                     const ForwardContext& ctx) const {
  if (kp.coords.cols() != gesture_.in_dim()) {
    throw InputError("style fusion expects " + std::to_string(gesture_.in_dim() / 2) + " joints, got " +
                     std::to_string(kp.joints()));
  }
  return forward(tape.constant(mel), tape.constant(keypoint_velocities(kp)), tape.constant(kp.coords), ctx);
}

FusionOutput StyleFusion::forward(const DTensor& mel, const DTensor& velocities, const DTensor& coords,
                                  const ForwardContext& ctx) const {
  FusionOutput o;
  o.speaker = speaker_(mel);
  o.motion = motion_.encode_velocities(motion_.velocity_scale * velocities);
  o.style = perceiver_(o.motion, o.speaker);
  o.gestures = gesture_(coords);
  switch (config_.mode) {
    case FusionMode::kMoE:
      o.fused = fuse_styles_moe(o.speaker, o.motion, o.style, moe_speech_, moe_motion_, moe_style_, ctx);
      break;
    case FusionMode::kCrossAttention:
      o.fused = fuse_styles_xattn(o.speaker, o.motion, o.style, xattn_);
      break;
    case FusionMode::kConcat:
      o.fused = fuse_styles_concat(o.speaker, o.motion, o.style, mixer_);
      break;
  }
  return o;
}

void StyleFusion::collect(DParameterRefs& refs) {
  speaker_.collect(refs);
  motion_.collect(refs);
  perceiver_.collect(refs);
  gesture_.collect(refs);
  switch (config_.mode) {
    case FusionMode::kMoE:
      moe_speech_.collect(refs);
      moe_motion_.collect(refs);
      moe_style_.collect(refs);
      break;
    case FusionMode::kCrossAttention:
      xattn_.collect(refs);
      break;
    case FusionMode::kConcat:
      mixer_.collect(refs);
      break;
  }
}

std::string embeddings_csv_header(Index dim) {
  std::string h = "sample_id,modality";
  for (Index i = 0; i < dim; ++i) h += ",v" + std::to_string(i);
  return h + "\n";
}

void write_embeddings_csv(std::ostream& out, const std::string& sample_id, const FusedStyle& fused) {
  char buf[32];
  const std::pair<const char*, const DTensor*> parts[] = {
      {"speech", &fused.z_speech}, {"motion", &fused.z_motion}, {"style", &fused.z_style}};
  for (const auto& [name, t] : parts) {
    const auto& v = t->value();
    for (Index r = 0; r < v.rows(); ++r) {
      out << sample_id << ',' << name;
      for (Index c = 0; c < v.cols(); ++c) {
        std::snprintf(buf, sizeof buf, "%.9g", v(r, c));
        out << ',' << buf;
      }
      out << '\n';
    }
  }
}

}  // namespace g2s
