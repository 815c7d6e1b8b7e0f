#pragma once

#include <vector>

#include "g2s/dataio/keypoints.hpp"

namespace g2s {

/// Speed of the whole pose: values[t] = fps * |K_{t+1} - K_t|, one entry per
/// consecutive frame pair. Entry t is stamped at time t / fps.
struct MotionMagnitude {
  std::vector<double> values;
  double fps = 25.0;

  double time(std::size_t i) const { return static_cast<double>(i) / fps; }
};

struct ApexList {
  std::vector<double> times;       // seconds, strictly increasing
  std::vector<double> magnitudes;  // peak value within each run

  std::size_t size() const { return times.size(); }
};

// Throws InputError for fewer than two frames.
MotionMagnitude motion_magnitude(const KeypointSequence& kp);

/// Runs of values with v / max(v) >= rel_threshold are candidate peaks.
/// Runs whose gap (start of the next minus end of the previous, in seconds)
/// is below min_gap are merged; the apex is the midpoint of the merged span
/// and its magnitude the largest value in it. An all-zero series gives no
/// apexes.
ApexList detect_apexes(const MotionMagnitude& m, double rel_threshold = 0.5, double min_gap = 0.25);

}  // namespace g2s
