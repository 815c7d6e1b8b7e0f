#include "g2s/training/model.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "g2s/alignment/motion.hpp"
#include "g2s/core/checkpoint.hpp"
#include "g2s/dataio/mel.hpp"
#include "g2s/dataio/wav.hpp"

namespace g2s {

namespace {

constexpr const char* kStatsName = "norm.stats";

std::vector<double> detect_apex_times(const KeypointSequence& kp) {
  return detect_apexes(motion_magnitude(kp)).times;
}

}  // namespace

TrainSample make_train_sample(const SynthSample& s, const DecoderConfig& cfg) {
  TrainSample t;
  t.id = s.id;
  t.text_ids = encode_text(s.text);
  t.mel = s.mel_target;
  t.keypoints = normalize_keypoints(s.keypoints);
  t.targets = make_decoder_targets(s.mel_target, s.duration, cfg);
  t.duration = s.duration;
  t.t_gesture = s.t_gesture_true;
  t.apexes = detect_apex_times(s.keypoints);
  return t;
}

TrainSample load_train_sample(const CorpusManifest& manifest, const ManifestEntry& entry, const DecoderConfig& cfg) {
  constexpr double kRate = 22050.0;
  const KeypointSequence kp = parse_keypoints(manifest.root / entry.keypoint_path);
  AudioClip audio = read_wav(manifest.root / entry.audio_path);
  if (audio.sample_rate != kRate) audio = resample(audio, kRate);
  MelOptions mel_opt;
  mel_opt.n_mels = static_cast<int>(cfg.mel_dim);
  TrainSample t;
  t.id = entry.clip_id;
  t.text_ids = encode_text(entry.transcript);
  t.mel = mel_spectrogram(audio, mel_opt);
  t.keypoints = normalize_keypoints(kp);
  t.duration = audio.duration();
  t.targets = make_decoder_targets(t.mel, t.duration, cfg);
  t.apexes = detect_apex_times(kp);
  if (t.apexes.empty()) throw InputError("clip " + entry.clip_id + " has no gesture apex");
  t.t_gesture = t.apexes.back();
  return t;
}

NormStats fit_norm_stats(const std::vector<TrainSample>& train) {
  if (train.empty()) throw InputError("cannot fit normalisation on an empty training split");
  double sum = 0.0, sq = 0.0, count = 0.0;
  double vsq = 0.0, vcount = 0.0;
  for (const auto& s : train) {
    sum += s.targets.mel.sum();
    sq += s.targets.mel.squaredNorm();
    count += static_cast<double>(s.targets.mel.size());
    const MatrixD v = keypoint_velocities(s.keypoints);
    vsq += v.squaredNorm();
    vcount += static_cast<double>(v.size());
  }
  NormStats st;
  st.mel_offset = sum / count;
  const double var = sq / count - st.mel_offset * st.mel_offset;
  st.mel_scale = var > 1e-12 ? std::sqrt(var) : 1.0;
  const double vrms = std::sqrt(vsq / vcount);
  st.velocity_scale = vrms > 1e-12 ? 1.0 / vrms : 1.0;
  return st;
}

Model::Model(const TrainConfig& cfg, const NormStats& stats) : stats_(stats) {
  cfg.validate();
  Rng rng(cfg.seed);
  FusionConfig fc = cfg.fusion_config();
  fc.velocity_scale = stats.velocity_scale;
  Rng fusion_rng = rng.split(1);
  fusion_ = StyleFusion(fc, fusion_rng);
  DecoderConfig dc = cfg.decoder_config();
  dc.mel_offset = stats.mel_offset;
  dc.mel_scale = stats.mel_scale;
  Rng decoder_rng = rng.split(2);
  decoder_ = Decoder(dc, decoder_rng);
  fusion_.collect(params_);
  decoder_.collect(params_);
}

ModelForward Model::forward(DTape& tape, const TrainSample& sample, const ForwardContext& ctx, CondDrop drop,
                            const LossWeights& weights) const {
  ModelForward f;
  f.fusion = fusion_(tape, sample.mel, sample.keypoints, ctx);
  Rng fallback(0);
  Rng& rng = ctx.rng != nullptr ? *ctx.rng : fallback;
  f.condition_dropped = decoder_.draw_condition_drop(rng, ctx.training, drop);
  const DTensor text = decoder_.embed_text(tape, sample.text_ids);
  const DTensor memory =
      decoder_.memory(text, f.fusion.gestures, sample.keypoints.fps, f.fusion.fused, f.condition_dropped);
  f.decoded = decoder_.teacher_forced(memory, sample.targets);
  f.losses = teacher_forced_losses(f.decoded, sample.targets, decoder_.config());
  f.alignment = abs(add_scalar(f.losses.t_expected, -sample.t_gesture));

  f.values = {f.losses.text.item(), f.losses.mel.item(), f.losses.duration.item(), f.alignment.item()};
  f.aux = f.fusion.fused.aux_loss.item();
  total_loss(f.values, weights, f.aux);  // diverged components throw here
  f.total = f.losses.text + f.losses.mel + weights.lambda_dur * f.losses.duration + weights.lambda_al * f.alignment +
            f.fusion.fused.aux_loss;
  return f;
}

void Model::save(const std::filesystem::path& path) const {
  DParameter stats(kStatsName, MatrixD(1, 3), 1);
  stats.value << stats_.mel_offset, stats_.mel_scale, stats_.velocity_scale;
  DParameterRefs refs = params_;
  refs.push_back(&stats);
  save_checkpoint(path, refs);
}

std::unique_ptr<Model> Model::load(const std::filesystem::path& path, const TrainConfig& cfg) {
  const auto entries = read_checkpoint(path);
  const auto it = entries.find(kStatsName);
  if (it == entries.end() || it->second.value.size() != 3) {
    throw FormatError("checkpoint " + path.string() + " lacks normalisation statistics");
  }
  const auto& v = it->second.value;
  auto model = std::make_unique<Model>(cfg, NormStats{v(0, 0), v(0, 1), v(0, 2)});
  DParameter stats(kStatsName, MatrixD(1, 3), 1);
  DParameterRefs refs = model->params_;
  refs.push_back(&stats);
  load_checkpoint(path, refs);
  return model;
}

}  // namespace g2s
