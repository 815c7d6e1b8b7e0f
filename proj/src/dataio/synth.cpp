#include "g2s/dataio/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "json.hpp"

namespace g2s {
namespace {

constexpr std::array<const char*, 40> kWords = {
    "the",    "hand",   "moves", "when",  "we",     "speak",  "about", "this",  "idea",    "and",
    "that",   "point",  "is",    "very",  "clear",  "so",     "look",  "here", "then",    "there",
    "really", "big",    "small", "first", "second", "again",  "now",   "you",  "see",     "what",
    "i",      "mean",   "right", "left",  "up",     "down",   "open",  "wide", "quickly", "slowly"};

double gauss(double z) { return std::exp(-0.5 * z * z); }

std::string make_text(Rng& rng, double duration, double words_per_second) {
  const auto n = std::max<long long>(2, std::llround(words_per_second * duration * rng.uniform(0.85, 1.15)));
  std::string text;
  for (long long i = 0; i < n; ++i) {
    if (i > 0) text += ' ';
    text += kWords[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(kWords.size()) - 1))];
  }
  return text;
}

// Apex frame indices: k sorted positions in [lo, hi] at least `gap` apart.
std::vector<Index> place_apexes(Rng& rng, int k, Index lo, Index hi, Index gap) {
  const Index free = hi - lo - static_cast<Index>(k - 1) * gap;
  std::vector<Index> u(static_cast<std::size_t>(k));
  for (auto& x : u) x = rng.uniform_int(0, static_cast<int>(free));
  std::sort(u.begin(), u.end());
  for (int j = 0; j < k; ++j) u[static_cast<std::size_t>(j)] += lo + j * gap;
  return u;
}

}  // namespace

SynthSample gen_synthetic_sample(std::uint64_t seed, std::size_t index, double jitter_std,
                                 const SynthOptions& opt) {
  if (jitter_std < 0.0) throw ContractError("jitter_std must be non-negative");
  Rng rng = Rng(seed).split(index);
  SynthSample s;
  char id[32];
  std::snprintf(id, sizeof id, "clip_%05zu", index);
  s.id = id;

  const auto min_frames = static_cast<Index>(std::ceil(opt.min_duration * opt.fps));
  const auto max_frames = static_cast<Index>(std::floor(opt.max_duration * opt.fps));
  const Index frames = std::clamp<Index>(std::llround(rng.uniform(opt.min_duration, opt.max_duration) * opt.fps),
                                         min_frames, max_frames);
  s.duration = static_cast<double>(frames) / opt.fps;
  s.speaker = rng.uniform_int(0, opt.speakers - 1);
  s.text = make_text(rng, s.duration, opt.words_per_second);

  // Apexes on the frame grid of the magnitude series (index i <-> i / fps).
  const auto lo = static_cast<Index>(std::ceil(opt.edge_margin * opt.fps));
  const auto hi = static_cast<Index>(std::floor((s.duration - opt.edge_margin) * opt.fps)) - 1;
  const auto gap = static_cast<Index>(std::ceil(opt.min_spacing * opt.fps));
  const int fits = static_cast<int>((hi - lo) / gap) + 1;
  const int k = std::min(rng.uniform_int(opt.min_apexes, opt.max_apexes), fits);
  const auto apex_frames = place_apexes(rng, k, lo, hi, gap);
  for (auto f : apex_frames) s.apex_times_true.push_back(static_cast<double>(f) / opt.fps);
  s.t_gesture_true = s.apex_times_true.back();

  // Keypoints: a resting pose plus one smooth stroke per apex along a random
  // direction, alternating sign so the pose drifts back.
  const Index J = opt.joints;
  Eigen::VectorXd pose(2 * J);
  for (Index j = 0; j < J; ++j) {
    pose(2 * j) = 320.0 + rng.uniform(-80.0, 80.0);
    pose(2 * j + 1) = 240.0 + rng.uniform(-80.0, 80.0);
  }
  std::vector<Eigen::VectorXd> dirs;
  std::vector<double> amps;
  for (int j = 0; j < k; ++j) {
    Eigen::VectorXd u(2 * J);
    for (Index c = 0; c < 2 * J; ++c) u(c) = rng.normal();
    u.normalize();
    dirs.push_back((j % 2 == 0 ? 1.0 : -1.0) * u);
    amps.push_back(rng.uniform(0.75, 1.0) * opt.peak_speed);
  }
  s.keypoints.fps = opt.fps;
  s.keypoints.coords.resize(frames, 2 * J);
  s.keypoints.confidences = MatrixD::Ones(frames, J);
  s.keypoints.coords.row(0) = pose.transpose();
  for (Index i = 0; i + 1 < frames; ++i) {
    const double t = static_cast<double>(i) / opt.fps;
    Eigen::VectorXd v = Eigen::VectorXd::Zero(2 * J);
    for (int j = 0; j < k; ++j) {
      v += amps[static_cast<std::size_t>(j)] * gauss((t - s.apex_times_true[static_cast<std::size_t>(j)]) / opt.bump_width) *
           dirs[static_cast<std::size_t>(j)];
    }
    pose += v / opt.fps;
    s.keypoints.coords.row(i + 1) = pose.transpose();
  }

  // Audio: a voiced tone whose f0 rises by 30-50 Hz around each pitch peak.
  std::vector<double> heights;
  for (int j = 0; j < k; ++j) {
    const double jitter = jitter_std > 0.0 ? rng.normal(0.0, jitter_std) : 0.0;
    s.pitch_peak_times_true.push_back(s.apex_times_true[static_cast<std::size_t>(j)] + jitter);
    heights.push_back(rng.uniform(30.0, 50.0));
  }
  const double base_f0 = 100.0 + 25.0 * s.speaker;
  const auto n = static_cast<Index>(std::llround(s.duration * opt.sample_rate));
  const double fade = 0.02 * opt.sample_rate;
  s.audio.sample_rate = opt.sample_rate;
  s.audio.samples.resize(n);
  double phase = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / opt.sample_rate;
    double f0 = base_f0;
    for (int j = 0; j < k; ++j) {
      f0 += heights[static_cast<std::size_t>(j)] *
            gauss((t - s.pitch_peak_times_true[static_cast<std::size_t>(j)]) / opt.bump_width);
    }
    const double env = std::min({1.0, static_cast<double>(i) / fade, static_cast<double>(n - 1 - i) / fade});
    s.audio.samples(i) = env * (0.4 * std::sin(phase) + 0.1 * std::sin(2.0 * phase));
    phase += 2.0 * std::numbers::pi * f0 / opt.sample_rate;
    if (phase > 2.0 * std::numbers::pi) phase -= 2.0 * std::numbers::pi;
  }
  s.mel_target = mel_spectrogram(s.audio, opt.mel);
  return s;
}

std::vector<SynthSample> gen_synthetic_corpus(int n, double jitter_std, Rng& rng, const SynthOptions& options) {
  if (n < 1) throw ContractError("corpus size must be at least 1");
  if (jitter_std < 0.0) throw ContractError("jitter_std must be non-negative");
  const std::uint64_t seed = rng.next_u64();
  std::vector<SynthSample> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out.push_back(gen_synthetic_sample(seed, static_cast<std::size_t>(i), jitter_std, options));
  return out;
}

void write_synthetic_corpus(const std::filesystem::path& root, const std::vector<SynthSample>& samples,
                            double jitter_std, std::uint64_t seed, const SynthOptions& options) {
  using nlohmann::json;
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw InputError("cannot create corpus directory " + root.string() + ": " + ec.message());

  auto write_text = [](const fs::path& p, const std::string& text) {
    std::ofstream out(p);
    if (!out) throw InputError("cannot write " + p.string());
    out << text;
  };

  json clips = json::array();
  for (const auto& s : samples) {
    const fs::path dir = root / s.id;
    fs::create_directories(dir, ec);
    if (ec) throw InputError("cannot create " + dir.string() + ": " + ec.message());
    write_keypoints(dir / "keypoints.json", s.keypoints);
    write_wav(dir / "audio.wav", s.audio, WavEncoding::kFloat32);
    write_text(dir / "transcript.txt", s.text + "\n");
    write_text(dir / "speaker.txt", "spk" + std::to_string(s.speaker) + "\n");
    json meta = {{"id", s.id},
                 {"duration", s.duration},
                 {"speaker", s.speaker},
                 {"apex_times", s.apex_times_true},
                 {"pitch_peak_times", s.pitch_peak_times_true},
                 {"t_gesture", s.t_gesture_true}};
    write_text(dir / "meta.json", meta.dump(2) + "\n");
    clips.push_back(s.id);
  }
  json meta = {{"generator", "synthetic"},
               {"n", samples.size()},
               {"jitter_std", jitter_std},
               {"seed", seed},
               {"joints", options.joints},
               {"fps", options.fps},
               {"sample_rate", options.sample_rate},
               {"min_duration", options.min_duration},
               {"max_duration", options.max_duration},
               {"clips", clips}};
  write_text(root / "metadata.json", meta.dump(2) + "\n");
}

}  // namespace g2s
