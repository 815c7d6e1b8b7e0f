#include "g2s/alignment/motion.hpp"

#include <algorithm>
#include <cmath>

namespace g2s {

MotionMagnitude motion_magnitude(const KeypointSequence& kp) {
  kp.validate();
  if (kp.frames() < 2) throw InputError("motion magnitude needs at least 2 frames, got " + std::to_string(kp.frames()));
  MotionMagnitude m;
  m.fps = kp.fps;
  m.values.resize(static_cast<std::size_t>(kp.frames() - 1));
  for (Index t = 0; t + 1 < kp.frames(); ++t) {
    m.values[static_cast<std::size_t>(t)] = kp.fps * (kp.coords.row(t + 1) - kp.coords.row(t)).norm();
  }
  return m;
}

ApexList detect_apexes(const MotionMagnitude& m, double rel_threshold, double min_gap) {
  if (!(rel_threshold > 0.0 && rel_threshold < 1.0)) throw ContractError("rel_threshold must lie in (0, 1)");
  ApexList out;
  if (m.values.empty()) return out;
  const double peak = *std::max_element(m.values.begin(), m.values.end());
  if (!(peak > 0.0)) return out;

  struct Run {
    std::size_t begin, end;  // inclusive
    double height;
  };
  std::vector<Run> runs;
  const std::size_t n = m.values.size();
  for (std::size_t i = 0; i < n;) {
    if (m.values[i] / peak < rel_threshold) {
      ++i;
      continue;
    }
    Run r{i, i, m.values[i]};
    while (r.end + 1 < n && m.values[r.end + 1] / peak >= rel_threshold) {
      ++r.end;
      r.height = std::max(r.height, m.values[r.end]);
    }
    i = r.end + 1;
    if (!runs.empty() && static_cast<double>(r.begin - runs.back().end) / m.fps < min_gap) {
      runs.back().end = r.end;
      runs.back().height = std::max(runs.back().height, r.height);
    } else {
      runs.push_back(r);
    }
  }
  for (const auto& r : runs) {
    out.times.push_back(0.5 * static_cast<double>(r.begin + r.end) / m.fps);
    out.magnitudes.push_back(r.height);
  }
  return out;
}

}  // namespace g2s
