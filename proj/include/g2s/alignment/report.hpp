#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "g2s/alignment/metrics.hpp"
#include "g2s/alignment/motion.hpp"
#include "g2s/alignment/pitch.hpp"
#include "g2s/dataio/keypoints.hpp"
#include "g2s/dataio/wav.hpp"

namespace g2s {

struct AnalysisOptions {
  double rel_threshold = 0.5;
  double apex_min_gap = 0.25;
  double prominence_min_gap = 0.25;
  double min_prominence_hz = 5.0;
  double max_lag = 1.0;
  int n_bins = 50;
  double sample_rate = 22050.0;  // audio is resampled to this rate first
  PitchOptions pitch;
};

struct AlignmentReport {
  std::string clip_id;
  double duration = 0.0;  // audio duration, seconds
  ApexList apexes;
  std::vector<double> prominences;
  std::vector<PeakPair> matched_pairs;
  std::optional<double> gesture_offset;  // nullopt: no matched pairs
  double mutual_info = 0.0;              // bits
  std::optional<double> cmtd;            // |end of voicing - final apex|

  // Series kept for plotting.
  MotionMagnitude magnitude;
  PitchContour pitch;
};

AlignmentReport analyze_clip(const std::string& clip_id, const KeypointSequence& kp, const AudioClip& audio,
                             const AnalysisOptions& options = {});

// JSON without the plotting series; deterministic formatting.
std::string report_json(const AlignmentReport& r);

// clip_id,offset_s,mi_bits,cmtd_s,n_apexes,n_peaks ; undefined values are empty.
std::string report_csv_header();
std::string report_csv_row(const AlignmentReport& r);

// Two stacked panels: motion magnitude with apex markers, f0 with prominence
// markers; matched pairs joined by dashed lines.
std::string report_svg(const AlignmentReport& r);

}  // namespace g2s
