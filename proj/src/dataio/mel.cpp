#include "g2s/dataio/mel.hpp"

#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include <unsupported/Eigen/FFT>

namespace g2s {

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

Eigen::VectorXd hann_window(int n) {
  Eigen::VectorXd w(n);
  for (int i = 0; i < n; ++i) w(i) = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);
  return w;
}

Index stft_frame_count(Index len, int n_fft, int hop) {
  if (len < n_fft) return 0;
  return 1 + (len - n_fft) / hop;
}

MatrixD stft_magnitude(std::span<const double> samples, int n_fft, int hop) {
  if (n_fft <= 0 || hop <= 0) throw ContractError("stft: n_fft and hop must be positive");
  const Index frames = stft_frame_count(static_cast<Index>(samples.size()), n_fft, hop);
  const int bins = n_fft / 2 + 1;
  MatrixD mag(frames, bins);
  const auto window = hann_window(n_fft);
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<double> buf(static_cast<std::size_t>(n_fft));
  std::vector<std::complex<double>> spec;
  for (Index f = 0; f < frames; ++f) {
    const std::size_t start = static_cast<std::size_t>(f * hop);
    for (int i = 0; i < n_fft; ++i) buf[static_cast<std::size_t>(i)] = samples[start + static_cast<std::size_t>(i)] * window(i);
    fft.fwd(spec, buf);
    for (int k = 0; k < bins; ++k) mag(f, k) = std::abs(spec[static_cast<std::size_t>(k)]);
  }
  return mag;
}

Eigen::VectorXd mel_band_centers(int n_mels, double fmin, double fmax) {
  const double lo = hz_to_mel(fmin), hi = hz_to_mel(fmax);
  Eigen::VectorXd c(n_mels);
  for (int m = 0; m < n_mels; ++m) c(m) = mel_to_hz(lo + (hi - lo) * (m + 1) / (n_mels + 1));
  return c;
}

MatrixD mel_filterbank(int n_fft, double sample_rate, int n_mels, double fmin, double fmax) {
  if (n_mels < 1 || !(fmax > fmin)) throw ContractError("mel_filterbank: invalid band layout");
  const int bins = n_fft / 2 + 1;
  const double lo = hz_to_mel(fmin), hi = hz_to_mel(fmax);
  std::vector<double> edges(static_cast<std::size_t>(n_mels + 2));
  for (int i = 0; i < n_mels + 2; ++i) edges[static_cast<std::size_t>(i)] = mel_to_hz(lo + (hi - lo) * i / (n_mels + 1));
  MatrixD fb = MatrixD::Zero(n_mels, bins);
  for (int m = 0; m < n_mels; ++m) {
    const double left = edges[static_cast<std::size_t>(m)];
    const double center = edges[static_cast<std::size_t>(m + 1)];
    const double right = edges[static_cast<std::size_t>(m + 2)];
    for (int k = 0; k < bins; ++k) {
      const double f = k * sample_rate / n_fft;
      double w = 0.0;
      if (f > left && f <= center) {
        w = (f - left) / (center - left);
      } else if (f > center && f < right) {
        w = (right - f) / (right - center);
      }
      fb(m, k) = w;
    }
  }
  return fb;
}

MatrixD mel_spectrogram(const AudioClip& clip, const MelOptions& options) {
  const auto len = clip.samples.size();
  if (len < options.n_fft) {
    throw InputError("clip of " + std::to_string(len) + " samples is shorter than n_fft=" +
                     std::to_string(options.n_fft));
  }
  const auto mag = stft_magnitude(std::span<const double>(clip.samples.data(), static_cast<std::size_t>(len)),
                                  options.n_fft, options.hop);
  const auto fb = mel_filterbank(options.n_fft, clip.sample_rate, options.n_mels, options.fmin, options.fmax);
  MatrixD mel = mag * fb.transpose();
  return mel.array().max(options.log_floor).log().matrix();
}

}  // namespace g2s
