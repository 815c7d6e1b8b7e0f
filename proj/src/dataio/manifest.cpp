#include "g2s/dataio/manifest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "g2s/core/errors.hpp"
#include "g2s/core/rng.hpp"
#include "g2s/dataio/wav.hpp"

namespace g2s {
namespace {

namespace fs = std::filesystem;

std::string read_first_line(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
  return line;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

}  // namespace

std::size_t CorpusManifest::train_count() const {
  return static_cast<std::size_t>(
      std::count_if(entries.begin(), entries.end(), [](const auto& e) { return e.split == Split::kTrain; }));
}

std::size_t CorpusManifest::test_count() const { return entries.size() - train_count(); }

CorpusManifest build_manifest(const fs::path& root, std::uint64_t seed, const ManifestOptions& options) {
  if (!fs::is_directory(root)) throw InputError("corpus root is not a directory: " + root.string());
  if (!(options.split_ratio >= 0.0 && options.split_ratio <= 1.0)) throw ContractError("split ratio must lie in [0, 1]");
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory()) dirs.push_back(e.path());
  }
  std::sort(dirs.begin(), dirs.end());

  CorpusManifest m;
  m.root = root;
  for (const auto& dir : dirs) {
    const std::string id = dir.filename().string();
    fs::path kp = dir / "keypoints.json";
    if (!fs::exists(kp) && fs::is_directory(dir / "keypoints")) kp = dir / "keypoints";
    const fs::path wav = dir / "audio.wav";
    const fs::path txt = dir / "transcript.txt";
    std::string missing;
    for (const auto& p : {kp, wav, txt}) {
      if (!fs::exists(p)) missing += (missing.empty() ? "" : " ") + p.filename().string();
    }
    if (!missing.empty()) {
      m.rejects.push_back({id, "unpaired: missing " + missing});
      continue;
    }
    double duration = 0.0;
    try {
      duration = wav_duration(wav);
    } catch (const Error& e) {
      m.rejects.push_back({id, std::string("unreadable audio: ") + e.what()});
      continue;
    }
    if (duration < options.min_duration || duration > options.max_duration) {
      m.rejects.push_back({id, "duration"});
      continue;
    }
    ManifestEntry entry;
    entry.clip_id = id;
    entry.keypoint_path = fs::relative(kp, root);
    entry.audio_path = fs::relative(wav, root);
    entry.transcript = read_first_line(txt);
    entry.speaker_id = fs::exists(dir / "speaker.txt") ? read_first_line(dir / "speaker.txt") : "unknown";
    entry.duration = duration;
    m.entries.push_back(std::move(entry));
  }

  // Fisher-Yates with a fixed generator so the split is reproducible.
  Rng rng(seed);
  for (std::size_t i = m.entries.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.next_u64() % i);
    std::swap(m.entries[i - 1], m.entries[j]);
  }
  const auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(m.entries.size()) * options.split_ratio));
  for (std::size_t i = 0; i < m.entries.size(); ++i) m.entries[i].split = i < n_train ? Split::kTrain : Split::kTest;
  return m;
}

void write_manifest_csv(const fs::path& path, const CorpusManifest& manifest) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write manifest: " + path.string());
  out << "clip_id,split,duration,speaker_id,keypoint_path,audio_path,transcript\n";
  char dur[32];
  for (const auto& e : manifest.entries) {
    std::snprintf(dur, sizeof dur, "%.6f", e.duration);
    out << csv_field(e.clip_id) << ',' << (e.split == Split::kTrain ? "train" : "test") << ',' << dur << ','
        << csv_field(e.speaker_id) << ',' << csv_field(e.keypoint_path.generic_string()) << ','
        << csv_field(e.audio_path.generic_string()) << ',' << csv_field(e.transcript) << '\n';
  }
}

void write_rejects_csv(const fs::path& path, const CorpusManifest& manifest) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write rejects report: " + path.string());
  out << "clip_id,reason\n";
  for (const auto& r : manifest.rejects) out << csv_field(r.clip_id) << ',' << csv_field(r.reason) << '\n';
}

CorpusManifest read_manifest_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open manifest: " + path.string());
  const fs::path base = path.parent_path();
  CorpusManifest m;
  m.root = base;
  std::string line;
  std::getline(in, line);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 7) throw ParseError(path.string() + ":" + std::to_string(lineno) + ": expected 7 fields");
    ManifestEntry e;
    e.clip_id = f[0];
    if (f[1] != "train" && f[1] != "test") {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": split must be train or test");
    }
    e.split = f[1] == "train" ? Split::kTrain : Split::kTest;
    try {
      e.duration = std::stod(f[2]);
    } catch (const std::exception&) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": bad duration");
    }
    e.speaker_id = f[3];
    e.keypoint_path = f[4];
    e.audio_path = f[5];
    e.transcript = f[6];
    m.entries.push_back(std::move(e));
  }
  return m;
}

}  // namespace g2s
