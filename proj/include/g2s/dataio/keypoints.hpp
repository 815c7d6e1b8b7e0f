#pragma once

#include <filesystem>

#include "g2s/core/tensor.hpp"

namespace g2s {

/// 2-D pose keypoints over time. Row t of `coords` is the row-major flatten
/// of the J x 2 joint matrix: (x0, y0, x1, y1, ...).
struct KeypointSequence {
  MatrixD coords;       // T x 2J
  MatrixD confidences;  // T x J, or empty when the source has none
  double fps = 25.0;

  Index frames() const { return coords.rows(); }
  Index joints() const { return coords.cols() / 2; }
  double duration() const { return static_cast<double>(frames()) / fps; }

  // Throws InputError when fps, joint layout or confidences are invalid.
  void validate() const;
};

/// Reads either a single JSON document
///   {"fps": 25, "frames": [{"people": [{"pose_keypoints_2d": [x, y, c, ...]}]}, ...]}
/// or a directory of per-frame OpenPose files ({"people": [...]}, sorted by
/// file name, 25 fps). Frames without a detected person repeat the previous
/// pose; leading gaps take the first detected pose.
KeypointSequence parse_keypoints(const std::filesystem::path& path);

void write_keypoints(const std::filesystem::path& path, const KeypointSequence& seq);

// Centres on the mean joint position and scales by the coordinate standard
// deviation; fps and confidences are kept.
KeypointSequence normalize_keypoints(const KeypointSequence& seq);

}  // namespace g2s
