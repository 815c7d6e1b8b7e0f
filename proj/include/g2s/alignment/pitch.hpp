#pragma once

#include <span>
#include <vector>

namespace g2s {

struct PitchOptions {
  double frame = 0.04;  // analysis window, seconds
  double hop = 0.01;
  double f0_min = 60.0;
  double f0_max = 500.0;
  double voicing_threshold = 0.3;
  // Among lags whose correlation reaches this fraction of the best, the
  // shortest wins; guards against picking a multiple of the period.
  double octave_ratio = 0.9;
};

struct PitchContour {
  std::vector<double> frame_times;  // window centres, uniform grid
  std::vector<double> f0;           // Hz, 0 where unvoiced
  std::vector<bool> voiced;
  double hop = 0.01;

  std::size_t size() const { return f0.size(); }
};

/// Normalised autocorrelation pitch tracker. For each frame
///   r(tau) = sum x_i x_{i+tau} / sqrt(E[0, N - tau) * E[tau, N))
/// over lags for [f0_min, f0_max]; voiced iff the chosen peak reaches the
/// voicing threshold; f0 = sr / tau after parabolic refinement. A signal
/// shorter than one frame yields an empty contour.
PitchContour extract_pitch(std::span<const double> samples, double sample_rate, const PitchOptions& options = {});

/// Local maxima of f0 inside voiced regions with topographic prominence of at
/// least min_prominence_hz, then non-maximum suppression: peaks are taken by
/// descending f0 (earlier first on ties) and any later candidate closer than
/// min_gap to a kept one is dropped. Returns ascending times.
std::vector<double> detect_prominences(const PitchContour& pc, double min_gap = 0.25, double min_prominence_hz = 5.0);

}  // namespace g2s
