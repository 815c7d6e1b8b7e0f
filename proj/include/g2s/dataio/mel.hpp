#pragma once

#include <span>

#include "g2s/core/tensor.hpp"
#include "g2s/dataio/wav.hpp"

namespace g2s {

struct MelOptions {
  int n_fft = 1024;
  int hop = 256;
  int n_mels = 80;
  double fmin = 0.0;
  double fmax = 8000.0;
  double log_floor = 1e-5;
};

// HTK mel scale: 2595 log10(1 + f / 700).
double hz_to_mel(double hz);
double mel_to_hz(double mel);

// Periodic Hann window of length n.
Eigen::VectorXd hann_window(int n);

// 1 + floor((len - n_fft) / hop); zero when the signal is shorter than n_fft.
Index stft_frame_count(Index len, int n_fft, int hop);

/// Magnitude STFT of Hann-windowed frames without centring or padding.
/// Result is F x (n_fft / 2 + 1).
MatrixD stft_magnitude(std::span<const double> samples, int n_fft, int hop);

/// Triangular filters (peak 1) on n_mels + 2 HTK-spaced edges.
/// Result is n_mels x (n_fft / 2 + 1).
MatrixD mel_filterbank(int n_fft, double sample_rate, int n_mels, double fmin, double fmax);

// Centre frequency (Hz) of each mel band.
Eigen::VectorXd mel_band_centers(int n_mels, double fmin, double fmax);

/// Natural-log mel spectrogram, F x n_mels, floored at log_floor.
/// Throws InputError when the clip is shorter than one FFT frame.
MatrixD mel_spectrogram(const AudioClip& clip, const MelOptions& options = {});

}  // namespace g2s
