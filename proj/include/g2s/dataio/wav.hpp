#pragma once

#include <filesystem>

#include <Eigen/Dense>

namespace g2s {

struct AudioClip {
  Eigen::VectorXd samples;  // mono, nominally in [-1, 1]
  double sample_rate = 22050.0;

  double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
};

enum class WavEncoding { kPcm16, kFloat32 };

// PCM-16 or IEEE float-32, mono or stereo (channels averaged).
AudioClip read_wav(const std::filesystem::path& path);

// Duration from the header alone.
double wav_duration(const std::filesystem::path& path);

void write_wav(const std::filesystem::path& path, const AudioClip& clip, WavEncoding encoding = WavEncoding::kFloat32);

/// Band-limited resampling with a Kaiser-windowed sinc kernel whose cutoff is
/// the lower of the two Nyquist frequencies. Output length is
/// round(len * target / source). Same-rate input is returned unchanged.
AudioClip resample(const AudioClip& clip, double target_rate);

}  // namespace g2s
