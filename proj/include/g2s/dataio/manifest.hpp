#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace g2s {

enum class Split { kTrain, kTest };

struct ManifestEntry {
  std::string clip_id;
  std::filesystem::path keypoint_path;
  std::filesystem::path audio_path;
  std::string transcript;
  std::string speaker_id;
  double duration = 0.0;
  Split split = Split::kTrain;
};

struct ManifestReject {
  std::string clip_id;
  std::string reason;  // "unpaired: <missing file>" or "duration"
};

struct CorpusManifest {
  std::filesystem::path root;          // entry paths are relative to this
  std::vector<ManifestEntry> entries;  // shuffled order; train entries first
  std::vector<ManifestReject> rejects;

  std::size_t train_count() const;
  std::size_t test_count() const;
};

struct ManifestOptions {
  double split_ratio = 0.9;
  double min_duration = 4.0;
  double max_duration = 15.0;
};

/// Scans root/<clip_id>/ for keypoints.json (or a keypoints/ directory),
/// audio.wav and transcript.txt; speaker.txt is optional. Clips missing a
/// file or outside the duration bounds are rejected. Accepted clips are
/// sorted by id, shuffled with `seed` and the first round(n * ratio) go to
/// training.
CorpusManifest build_manifest(const std::filesystem::path& root, std::uint64_t seed, const ManifestOptions& options = {});

// CSV: clip_id,split,duration,speaker_id,keypoint_path,audio_path,transcript
void write_manifest_csv(const std::filesystem::path& path, const CorpusManifest& manifest);
void write_rejects_csv(const std::filesystem::path& path, const CorpusManifest& manifest);

CorpusManifest read_manifest_csv(const std::filesystem::path& path);

}  // namespace g2s
