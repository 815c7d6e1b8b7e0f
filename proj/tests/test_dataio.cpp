#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include <unsupported/Eigen/FFT>

#include "g2s/alignment/motion.hpp"
#include "g2s/alignment/report.hpp"
#include "g2s/core/errors.hpp"
#include "g2s/dataio/keypoints.hpp"
#include "g2s/dataio/manifest.hpp"
#include "g2s/dataio/mel.hpp"
#include "g2s/dataio/synth.hpp"
#include "g2s/dataio/wav.hpp"

namespace fs = std::filesystem;

namespace g2s {
namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("g2s_dataio_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

AudioClip tone(double hz, double rate, double seconds, double amplitude = 0.5) {
  AudioClip c;
  c.sample_rate = rate;
  c.samples.resize(static_cast<Index>(std::lround(rate * seconds)));
  for (Index i = 0; i < c.samples.size(); ++i) {
    c.samples[i] = amplitude * std::sin(2.0 * std::numbers::pi * hz * static_cast<double>(i) / rate);
  }
  return c;
}

void write_text(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

TEST(Keypoints, EmptyFrameHoldsThePreviousPose) {
  const auto dir = scratch("hold");
  write_text(dir / "kp.json", R"({"fps": 10, "frames": [
    {"people": [{"pose_keypoints_2d": [1, 2, 0.9, 3, 4, 0.8]}]},
    {"people": []},
    {"people": [{"pose_keypoints_2d": [5, 6, 1.0, 7, 8, 1.0]}]}]})");
  const auto kp = parse_keypoints(dir / "kp.json");
  EXPECT_EQ(kp.fps, 10.0);
  ASSERT_EQ(kp.frames(), 3);
  ASSERT_EQ(kp.joints(), 2);
  EXPECT_EQ(kp.coords.row(1), kp.coords.row(0));
  EXPECT_EQ(kp.coords(2, 3), 8.0);
}

TEST(Keypoints, LeadingGapTakesTheFirstDetection) {
  const auto dir = scratch("lead");
  write_text(dir / "kp.json", R"({"frames": [{"people": []},
    {"people": [{"pose_keypoints_2d": [5, 6, 1.0]}]}]})");
  const auto kp = parse_keypoints(dir / "kp.json");
  EXPECT_EQ(kp.fps, 25.0);
  EXPECT_EQ(kp.coords.row(0), kp.coords.row(1));
}

TEST(Keypoints, PerFrameDirectoryIsReadInNameOrder) {
  const auto dir = scratch("frames");
  fs::create_directories(dir / "kp");
  write_text(dir / "kp" / "f_000001.json", R"({"people": [{"pose_keypoints_2d": [9, 9, 1]}]})");
  write_text(dir / "kp" / "f_000000.json", R"({"people": [{"pose_keypoints_2d": [1, 1, 1]}]})");
  const auto kp = parse_keypoints(dir / "kp");
  ASSERT_EQ(kp.frames(), 2);
  EXPECT_EQ(kp.coords(0, 0), 1.0);
  EXPECT_EQ(kp.coords(1, 0), 9.0);
}

TEST(Keypoints, MalformedInputIsRejected) {
  const auto dir = scratch("bad");
  write_text(dir / "a.json", R"({"frames": [{"people": [{"pose_keypoints_2d": [1, 2]}]}]})");
  EXPECT_THROW(parse_keypoints(dir / "a.json"), ParseError);
  write_text(dir / "b.json", "{not json");
  EXPECT_THROW(parse_keypoints(dir / "b.json"), ParseError);
  write_text(dir / "c.json", R"({"frames": [{"people": []}]})");
  EXPECT_THROW(parse_keypoints(dir / "c.json"), InputError);
  EXPECT_THROW(parse_keypoints(dir / "missing.json"), InputError);
}

TEST(Keypoints, WriteParseRoundTrip) {
  const auto dir = scratch("rt");
  KeypointSequence kp;
  kp.fps = 30.0;
  kp.coords = MatrixD::Random(4, 6) * 100.0;
  kp.confidences = MatrixD::Constant(4, 3, 0.5);
  write_keypoints(dir / "kp.json", kp);
  const auto back = parse_keypoints(dir / "kp.json");
  EXPECT_EQ(back.fps, 30.0);
  EXPECT_EQ(back.coords, kp.coords);
}

TEST(Keypoints, NormalisationCentresAndScales) {
  KeypointSequence kp;
  kp.coords = MatrixD::Random(20, 8) * 50.0;
  kp.coords.array() += 300.0;
  const auto n = normalize_keypoints(kp);
  double sx = 0.0, sy = 0.0;
  for (Index j = 0; j < 4; ++j) {
    sx += n.coords.col(2 * j).sum();
    sy += n.coords.col(2 * j + 1).sum();
  }
  EXPECT_NEAR(sx, 0.0, 1e-9);
  EXPECT_NEAR(sy, 0.0, 1e-9);
  EXPECT_NEAR(n.coords.squaredNorm() / (20.0 * 4.0), 1.0, 1e-12);
}

TEST(Wav, Pcm16AndFloatRoundTrip) {
  const auto dir = scratch("wav");
  const AudioClip c = tone(300.0, 16000.0, 0.1);
  write_wav(dir / "f.wav", c, WavEncoding::kFloat32);
  const auto f = read_wav(dir / "f.wav");
  EXPECT_EQ(f.sample_rate, 16000.0);
  EXPECT_LE((f.samples - c.samples).cwiseAbs().maxCoeff(), 1e-7);
  write_wav(dir / "p.wav", c, WavEncoding::kPcm16);
  const auto p = read_wav(dir / "p.wav");
  EXPECT_LE((p.samples - c.samples).cwiseAbs().maxCoeff(), 1.0 / 32767.0);
  EXPECT_NEAR(wav_duration(dir / "p.wav"), 0.1, 1e-12);
}

TEST(Wav, GarbageIsAFormatError) {
  const auto dir = scratch("garbage");
  write_text(dir / "x.wav", "definitely not audio");
  EXPECT_THROW(read_wav(dir / "x.wav"), FormatError);
}

TEST(Resample, KeepsTheDominantFrequency) {
  const AudioClip c = tone(440.0, 44100.0, 1.0);
  const AudioClip r = resample(c, 22050.0);
  ASSERT_EQ(r.samples.size(), 22050);
  Eigen::FFT<double> fft;
  std::vector<double> x(r.samples.data(), r.samples.data() + r.samples.size());
  std::vector<std::complex<double>> X;
  fft.fwd(X, x);
  std::size_t best = 1;
  for (std::size_t k = 1; k < X.size() / 2; ++k) {
    if (std::abs(X[k]) > std::abs(X[best])) best = k;
  }
  EXPECT_EQ(best, 440u);  // 1 s of signal: bin k is k Hz
}

TEST(Resample, SameRateIsIdentity) {
  const AudioClip c = tone(100.0, 8000.0, 0.05);
  EXPECT_EQ(resample(c, 8000.0).samples, c.samples);
}

TEST(Mel, ScaleRoundTripAndFrameCount) {
  EXPECT_NEAR(mel_to_hz(hz_to_mel(1234.5)), 1234.5, 1e-9);
  EXPECT_NEAR(hz_to_mel(700.0), 2595.0 * std::log10(2.0), 1e-12);
  EXPECT_EQ(stft_frame_count(1023, 1024, 256), 0);
  EXPECT_EQ(stft_frame_count(1024 + 256 * 3 + 10, 1024, 256), 4);
}

TEST(Mel, FrameCountMatchesTheStft) {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const int n_fft = 1 << rng.uniform_int(3, 7);
    const int hop = rng.uniform_int(1, n_fft);
    const Index len = rng.uniform_int(n_fft, 600);
    const std::vector<double> x(static_cast<std::size_t>(len), 0.25);
    EXPECT_EQ(stft_magnitude(x, n_fft, hop).rows(), 1 + (len - n_fft) / hop);
    EXPECT_EQ(stft_frame_count(len, n_fft, hop), 1 + (len - n_fft) / hop);
  }
}

TEST(Mel, ToneLandsInItsBand) {
  const AudioClip c = tone(440.0, 22050.0, 0.5);
  const MatrixD m = mel_spectrogram(c);
  Index band = 0;
  m.colwise().mean().maxCoeff(&band);
  const auto centres = mel_band_centers(80, 0.0, 8000.0);
  Index nearest = 0;
  (centres.array() - 440.0).abs().minCoeff(&nearest);
  EXPECT_EQ(band, nearest);
}

TEST(Mel, ParsevalOnEachFrame) {
  Rng rng(3);
  std::vector<double> x(4096);
  for (auto& v : x) v = rng.normal(0.0, 0.3);
  const int n = 1024, hop = 512;
  const MatrixD S = stft_magnitude(x, n, hop);
  const auto w = hann_window(n);
  for (Index f = 0; f < S.rows(); ++f) {
    double energy = 0.0;
    for (int i = 0; i < n; ++i) {
      const double v = x[static_cast<std::size_t>(f * hop + i)] * w[i];
      energy += v * v;
    }
    double spec = S(f, 0) * S(f, 0) + S(f, n / 2) * S(f, n / 2);
    for (int k = 1; k < n / 2; ++k) spec += 2.0 * S(f, k) * S(f, k);
    EXPECT_NEAR(spec / n, energy, 0.01 * energy);
  }
}

TEST(Mel, ShortClipThrows) {
  EXPECT_THROW(mel_spectrogram(tone(100.0, 22050.0, 0.01)), InputError);
}

TEST(Synth, SampleDependsOnlyOnSeedAndIndex) {
  const auto a = gen_synthetic_sample(5, 3, 0.0);
  const auto b = gen_synthetic_sample(5, 3, 0.0);
  EXPECT_EQ(a.audio.samples, b.audio.samples);
  EXPECT_EQ(a.keypoints.coords, b.keypoints.coords);
  EXPECT_EQ(a.text, b.text);
  EXPECT_NE(gen_synthetic_sample(5, 4, 0.0).audio.samples.size(), 0);
}

TEST(Synth, DurationsAndApexPlacementRespectBounds) {
  Rng rng(1);
  const SynthOptions opt;
  for (const auto& s : gen_synthetic_corpus(20, 0.0, rng)) {
    EXPECT_GE(s.duration, opt.min_duration);
    EXPECT_LE(s.duration, opt.max_duration);
    ASSERT_GE(s.apex_times_true.size(), 2u);
    EXPECT_GE(s.apex_times_true.front(), opt.edge_margin - 1e-12);
    EXPECT_LE(s.apex_times_true.back(), s.duration - opt.edge_margin + 1e-12);
    EXPECT_EQ(s.t_gesture_true, s.apex_times_true.back());
    EXPECT_EQ(s.apex_times_true, s.pitch_peak_times_true);
  }
}

TEST(Synth, DetectorRecoversEveryPlantedApex) {
  Rng rng(2);
  for (const auto& s : gen_synthetic_corpus(30, 0.0, rng)) {
    const auto apexes = detect_apexes(motion_magnitude(s.keypoints));
    ASSERT_EQ(apexes.size(), s.apex_times_true.size()) << s.id;
    for (std::size_t i = 0; i < apexes.size(); ++i) {
      EXPECT_NEAR(apexes.times[i], s.apex_times_true[i], 1.0 / s.keypoints.fps) << s.id;
    }
  }
}

TEST(Synth, ZeroJitterPipelineOffsetIsBelowOneHop) {
  Rng rng(4);
  for (const auto& s : gen_synthetic_corpus(5, 0.0, rng)) {
    const auto r = analyze_clip(s.id, s.keypoints, s.audio);
    ASSERT_TRUE(r.gesture_offset.has_value()) << s.id;
    EXPECT_LT(*r.gesture_offset, 256.0 / 22050.0) << s.id;
  }
}

TEST(Synth, BadArgumentsAreContractErrors) {
  Rng rng(1);
  EXPECT_THROW(gen_synthetic_corpus(0, 0.0, rng), ContractError);
  EXPECT_THROW(gen_synthetic_corpus(3, -0.1, rng), ContractError);
}

TEST(Manifest, SplitsAndRejects) {
  const auto dir = scratch("manifest");
  Rng rng(6);
  const auto samples = gen_synthetic_corpus(10, 0.0, rng);
  write_synthetic_corpus(dir, samples, 0.0, 6);
  // An unpaired clip and a too-short clip.
  fs::create_directories(dir / "orphan");
  write_text(dir / "orphan" / "transcript.txt", "hello");
  fs::create_directories(dir / "short");
  write_keypoints(dir / "short" / "keypoints.json", samples[0].keypoints);
  write_wav(dir / "short" / "audio.wav", tone(200.0, 22050.0, 1.0));
  write_text(dir / "short" / "transcript.txt", "short");

  const auto m = build_manifest(dir, 11);
  EXPECT_EQ(m.train_count(), 9u);
  EXPECT_EQ(m.test_count(), 1u);
  ASSERT_EQ(m.rejects.size(), 2u);
  for (const auto& r : m.rejects) {
    if (r.clip_id == "orphan") EXPECT_EQ(r.reason.rfind("unpaired", 0), 0u);
    if (r.clip_id == "short") EXPECT_EQ(r.reason, "duration");
  }
  for (std::size_t i = 0; i + 1 < m.entries.size(); ++i) {
    EXPECT_FALSE(m.entries[i].split == Split::kTest && m.entries[i + 1].split == Split::kTrain);
  }

  write_manifest_csv(dir / "manifest.csv", m);
  const auto back = read_manifest_csv(dir / "manifest.csv");
  ASSERT_EQ(back.entries.size(), m.entries.size());
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    EXPECT_EQ(back.entries[i].clip_id, m.entries[i].clip_id);
    EXPECT_EQ(back.entries[i].split, m.entries[i].split);
    EXPECT_EQ(back.entries[i].transcript, m.entries[i].transcript);
  }
  EXPECT_EQ(build_manifest(dir, 11).entries[0].clip_id, m.entries[0].clip_id);
}

}  // namespace
}  // namespace g2s
