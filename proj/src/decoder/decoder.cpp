#include "g2s/decoder/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace g2s {

void DecoderConfig::validate() const {
  if (layers < 1 || dim < 1 || max_steps < 1 || mel_dim < 1) throw ConfigError("decoder sizes must be positive");
  if (heads < 1 || dim % heads != 0) throw ConfigError("decoder dim must be divisible by heads");
  if (vocab_size < 2 || text_vocab < 2) throw ConfigError("decoder vocabularies need at least 2 entries");
  if (!(stop_threshold > 0.0 && stop_threshold < 1.0)) throw ConfigError("stop_threshold must lie in (0, 1)");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (!(cond_drop_prob >= 0.0 && cond_drop_prob <= 1.0)) throw ConfigError("cond_drop_prob must lie in [0, 1]");
  if (reduction < 1 || !(frame_hop > 0.0)) throw ConfigError("reduction and frame_hop must be positive");
  if (!(mel_scale > 0.0)) throw ConfigError("mel_scale must be positive");
}

std::vector<int> encode_text(std::string_view text) {
  std::vector<int> ids;
  ids.reserve(text.size());
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    ids.push_back(c >= 32 && c <= 126 ? static_cast<int>(c) - 31 : 0);
  }
  return ids;
}

MatrixD position_encoding(Index n, Index d) {
  MatrixD pe(n, d);
  for (Index p = 0; p < n; ++p) {
    for (Index i = 0; i < d; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
      pe(p, i) = i % 2 == 0 ? std::sin(p * rate) : std::cos(p * rate);
    }
  }
  return pe;
}

MatrixD time_encoding(std::span<const double> times, Index d) {
  const Index half = std::max<Index>(1, d / 2);
  MatrixD pe = MatrixD::Zero(static_cast<Index>(times.size()), d);
  for (Index r = 0; r < pe.rows(); ++r) {
    for (Index i = 0; i < d; ++i) {
      const Index f = std::min(i / 2, half - 1);
      const double period = 0.1 * std::pow(400.0, half > 1 ? static_cast<double>(f) / static_cast<double>(half - 1) : 0.0);
      const double phase = 2.0 * std::numbers::pi * times[static_cast<std::size_t>(r)] / period;
      pe(r, i) = i % 2 == 0 ? std::sin(phase) : std::cos(phase);
    }
  }
  return pe;
}

DecoderTargets make_decoder_targets(const MatrixD& mel, double duration, const DecoderConfig& cfg, double silence_level) {
  if (mel.rows() == 0) throw InputError("decoder targets need at least one mel frame");
  if (mel.cols() != cfg.mel_dim) throw ShapeError("mel width does not match decoder mel_dim");
  const Index r = cfg.reduction;
  const Index steps = std::min<Index>((mel.rows() + r - 1) / r, cfg.max_steps);
  DecoderTargets t;
  t.duration = std::min(duration, steps * cfg.step_seconds());
  t.mel.resize(steps, mel.cols());
  t.tokens.resize(static_cast<std::size_t>(steps));
  for (Index s = 0; s < steps; ++s) {
    const Index begin = s * r;
    const Index count = std::min(r, mel.rows() - begin);
    t.mel.row(s) = mel.middleRows(begin, count).colwise().mean();
    Index band = 0;
    const double loudest = t.mel.row(s).maxCoeff(&band);
    t.tokens[static_cast<std::size_t>(s)] =
        loudest < silence_level ? 0 : 1 + static_cast<int>(std::min<Index>(band, cfg.vocab_size - 2));
  }
  return t;
}

StopDecision stop_time(std::span<const double> stop_probs, double threshold, double hop) {
  StopDecision d;
  for (std::size_t i = 0; i < stop_probs.size(); ++i) {
    if (stop_probs[i] >= threshold) {
      d.steps = static_cast<int>(i) + 1;
      d.t_pred = d.steps * hop;
      return d;
    }
  }
  d.steps = static_cast<int>(stop_probs.size());
  d.t_pred = d.steps * hop;
  d.truncated = true;
  return d;
}

Decoder::Decoder(const DecoderConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  const Index d = config_.dim;
  text_embedding_ = Parameter<double>("decoder.text_embedding", normal_init<double>(config_.text_vocab, d, 1.0, rng));
  token_embedding_ = Parameter<double>("decoder.token_embedding", normal_init<double>(config_.vocab_size + 1, d, 1.0, rng));
  prenet_in_ = Linear<double>(config_.mel_dim, d, rng, "decoder.prenet_in");
  prenet_out_ = Linear<double>(d, d, rng, "decoder.prenet_out");
  memory_norm_ = LayerNorm<double>(d, "decoder.memory_norm");
  blocks_.resize(static_cast<std::size_t>(config_.layers));
  for (int l = 0; l < config_.layers; ++l) {
    const std::string p = "decoder.layer" + std::to_string(l);
    auto& b = blocks_[static_cast<std::size_t>(l)];
    b.norm_self = LayerNorm<double>(d, p + ".norm_self");
    b.norm_cross = LayerNorm<double>(d, p + ".norm_cross");
    b.norm_ff = LayerNorm<double>(d, p + ".norm_ff");
    b.self_attn = MultiHeadAttention<double>(d, config_.heads, rng, p + ".self_attn");
    b.cross_attn = MultiHeadAttention<double>(d, config_.heads, rng, p + ".cross_attn");
    b.ff = FeedForward<double>(d, 2 * d, rng, p + ".ff", config_.leaky_slope);
  }
  final_norm_ = LayerNorm<double>(d, "decoder.final_norm");
  token_head_ = Linear<double>(d, config_.vocab_size, rng, "decoder.token_head");
  mel_head_ = Linear<double>(d, config_.mel_dim, rng, "decoder.mel_head");
  stop_head_ = Linear<double>(d, 1, rng, "decoder.stop_head");
  stop_head_.bias.value.setConstant(config_.stop_bias_init);
}

DTensor Decoder::embed_text(DTape& tape, std::span<const int> ids) const {
  if (ids.empty()) throw InputError("decoder: empty text");
  std::vector<Index> rows(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= config_.text_vocab) throw ContractError("text id out of vocabulary");
    rows[i] = ids[i];
  }
  const auto n = static_cast<Index>(ids.size());
  return gather_rows(tape.parameter(text_embedding_), std::span<const Index>(rows)) +
         tape.constant(position_encoding(n, config_.dim));
}

bool Decoder::draw_condition_drop(Rng& rng, bool training, CondDrop mode) const {
  switch (mode) {
    case CondDrop::kForceOn:
      return true;
    case CondDrop::kForceOff:
      return false;
    case CondDrop::kSample:
      break;
  }
  return training && rng.bernoulli(config_.cond_drop_prob);
}

DTensor Decoder::memory(const DTensor& text, const DTensor& gestures, double fps, const FusedStyle& fused,
                        bool drop) const {
  const Index d = config_.dim;
  if (text.cols() != d || gestures.cols() != d || fused.z_total.cols() != d) {
    throw ShapeError("decoder memory parts must all have width d=" + std::to_string(d));
  }
  if (drop) return memory_norm_(text);
  auto& tape = text.tape();
  const Index T = gestures.rows();
  std::vector<double> times(static_cast<std::size_t>(T));
  for (Index t = 0; t < T; ++t) times[static_cast<std::size_t>(t)] = static_cast<double>(t) / fps;
  const MatrixD frame_pe = time_encoding(times, d);
  MatrixD z_pe = MatrixD::Zero(fused.z_total.rows(), d);
  if (fused.z_motion.rows() == T && fused.z_total.rows() >= 1 + T) z_pe.middleRows(1, T) = frame_pe;
  return memory_norm_(concat_rows<double>({text, gestures + tape.constant(frame_pe), fused.z_total + tape.constant(z_pe)}));
}

TeacherForcedOutput Decoder::run(const DTensor& memory, const MatrixD& prev_mel, std::span<const int> prev_tokens) const {
  auto& tape = memory.tape();
  const Index S = prev_mel.rows();
  std::vector<double> times(static_cast<std::size_t>(S));
  for (Index s = 0; s < S; ++s) times[static_cast<std::size_t>(s)] = static_cast<double>(s + 1) * config_.step_seconds();
  std::vector<Index> tok(prev_tokens.begin(), prev_tokens.end());

  const MatrixD mel_in = (prev_mel.array() - config_.mel_offset) / config_.mel_scale;
  DTensor x = prenet_out_(leaky_relu(prenet_in_(tape.constant(mel_in)), config_.leaky_slope)) +
              gather_rows(tape.parameter(token_embedding_), std::span<const Index>(tok)) +
              tape.constant(time_encoding(times, config_.dim));
  const MatrixD mask = causal_mask<double>(S);
  for (const auto& b : blocks_) {
    auto h = b.norm_self(x);
    x = x + b.self_attn(h, h, h, &mask);
    h = b.norm_cross(x);
    x = x + b.cross_attn(h, memory, memory);
    x = x + b.ff(b.norm_ff(x));
  }
  x = final_norm_(x);
  TeacherForcedOutput out;
  out.token_logits = token_head_(x);
  out.mel = add_scalar(config_.mel_scale * mel_head_(x), config_.mel_offset);
  out.stop_logits = stop_head_(x);
  return out;
}

TeacherForcedOutput Decoder::teacher_forced(const DTensor& memory, const DecoderTargets& targets) const {
  const Index S = config_.max_steps;
  if (targets.steps() > S) throw ContractError("targets longer than max_steps");
  if (targets.mel.cols() != config_.mel_dim) throw ContractError("target mel width does not match decoder");
  MatrixD prev = MatrixD::Constant(S, config_.mel_dim, config_.silence_mel);
  std::vector<int> tokens(static_cast<std::size_t>(S), 0);
  tokens[0] = config_.vocab_size;
  for (Index s = 1; s < S && s - 1 < targets.steps(); ++s) {
    prev.row(s) = targets.mel.row(s - 1);
    tokens[static_cast<std::size_t>(s)] = targets.tokens[static_cast<std::size_t>(s - 1)];
  }
  return run(memory, prev, tokens);
}

DecoderOutput Decoder::generate(const DTensor& memory, Rng& rng, double temperature) const {
  const Index S = config_.max_steps;
  const Index V = config_.vocab_size;
  DecoderOutput out;
  out.token_logits.resize(0, V);
  out.mel.resize(0, config_.mel_dim);
  MatrixD prev = MatrixD::Constant(1, config_.mel_dim, config_.silence_mel);
  std::vector<int> prev_tokens{config_.vocab_size};
  for (Index s = 0; s < S; ++s) {
    DTape tape;
    const auto mem = tape.constant(memory.value());
    const auto step = run(mem, prev, prev_tokens);
    const Eigen::RowVectorXd logits = step.token_logits.value().row(s);
    const Eigen::RowVectorXd mel = step.mel.value().row(s);
    const double p_stop = 1.0 / (1.0 + std::exp(-step.stop_logits.value()(s, 0)));

    Index token = 0;
    if (temperature <= 0.0) {
      logits.maxCoeff(&token);
    } else {
      Eigen::RowVectorXd p = ((logits.array() - logits.maxCoeff()) / temperature).exp();
      p /= p.sum();
      const double u = rng.uniform();
      double acc = 0.0;
      token = V - 1;
      for (Index v = 0; v < V; ++v) {
        acc += p(v);
        if (u < acc) {
          token = v;
          break;
        }
      }
    }
    out.token_logits.conservativeResize(s + 1, Eigen::NoChange);
    out.token_logits.row(s) = logits;
    out.mel.conservativeResize(s + 1, Eigen::NoChange);
    out.mel.row(s) = mel;
    out.stop_probs.push_back(p_stop);
    out.tokens.push_back(static_cast<int>(token));
    if (p_stop >= config_.stop_threshold) break;
    prev.conservativeResize(s + 2, Eigen::NoChange);
    prev.row(s + 1) = mel;
    prev_tokens.push_back(static_cast<int>(token));
  }
  const auto d = stop_time(out.stop_probs, config_.stop_threshold, config_.step_seconds());
  out.t_pred = d.t_pred;
  out.truncated = d.truncated;
  return out;
}

void Decoder::collect(DParameterRefs& refs) {
  refs.push_back(&text_embedding_);
  refs.push_back(&token_embedding_);
  prenet_in_.collect(refs);
  prenet_out_.collect(refs);
  memory_norm_.collect(refs);
  for (auto& b : blocks_) {
    b.norm_self.collect(refs);
    b.norm_cross.collect(refs);
    b.norm_ff.collect(refs);
    b.self_attn.collect(refs);
    b.cross_attn.collect(refs);
    b.ff.collect(refs);
  }
  final_norm_.collect(refs);
  token_head_.collect(refs);
  mel_head_.collect(refs);
  stop_head_.collect(refs);
}

DecoderLosses teacher_forced_losses(const TeacherForcedOutput& out, const DecoderTargets& targets,
                                    const DecoderConfig& cfg) {
  const Index real = targets.steps();
  if (real < 1 || real > out.mel.rows()) throw ContractError("target length does not fit the decoder output");
  if (static_cast<Index>(targets.tokens.size()) != real) throw ContractError("token and mel target lengths differ");
  if (targets.mel.cols() != out.mel.cols()) throw ContractError("target mel width does not match prediction");
  auto& tape = out.mel.tape();
  DecoderLosses l;
  l.text = cross_entropy_rows(slice_rows(out.token_logits, 0, real), std::span<const int>(targets.tokens));
  l.mel = mean(abs(slice_rows(out.mel, 0, real) - tape.constant(targets.mel)));
  l.t_expected = expected_stop_time(out.stop_logits, cfg.step_seconds());
  l.duration = abs(add_scalar(l.t_expected, -targets.duration));
  return l;
}

}  // namespace g2s
