#include "g2s/dataio/keypoints.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <vector>

#include "json.hpp"

namespace g2s {
namespace {

using nlohmann::json;

struct FramePose {
  std::vector<double> xy;    // 2J
  std::vector<double> conf;  // J
};

std::optional<FramePose> read_frame(const json& frame, std::size_t index) {
  if (!frame.is_object() || !frame.contains("people") || !frame["people"].is_array()) {
    throw ParseError("frame " + std::to_string(index) + ": missing 'people' array");
  }
  const auto& people = frame["people"];
  if (people.empty()) return std::nullopt;
  const auto& person = people[0];
  if (!person.is_object() || !person.contains("pose_keypoints_2d") || !person["pose_keypoints_2d"].is_array()) {
    throw ParseError("frame " + std::to_string(index) + ": missing people[0].pose_keypoints_2d");
  }
  const auto& flat = person["pose_keypoints_2d"];
  if (flat.size() % 3 != 0 || flat.empty()) {
    throw ParseError("frame " + std::to_string(index) + ": pose_keypoints_2d length " +
                     std::to_string(flat.size()) + " is not a positive multiple of 3");
  }
  FramePose pose;
  for (std::size_t j = 0; j < flat.size() / 3; ++j) {
    for (std::size_t c = 0; c < 3; ++c) {
      if (!flat[3 * j + c].is_number()) {
        throw ParseError("frame " + std::to_string(index) + ": non-numeric keypoint entry");
      }
    }
    pose.xy.push_back(flat[3 * j].get<double>());
    pose.xy.push_back(flat[3 * j + 1].get<double>());
    pose.conf.push_back(flat[3 * j + 2].get<double>());
  }
  return pose;
}

json load_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open keypoint file: " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

KeypointSequence assemble(const std::vector<std::optional<FramePose>>& frames, double fps) {
  std::optional<std::size_t> joints;
  std::size_t first_valid = frames.size();
  for (std::size_t t = 0; t < frames.size(); ++t) {
    if (!frames[t]) continue;
    const std::size_t j = frames[t]->conf.size();
    if (!joints) {
      joints = j;
      first_valid = t;
    } else if (j != *joints) {
      throw InputError("frame " + std::to_string(t) + " has " + std::to_string(j) + " joints, expected " +
                       std::to_string(*joints));
    }
  }
  if (!joints) throw InputError("keypoint sequence has no frame with a detected person");

  const auto T = static_cast<Index>(frames.size());
  const auto J = static_cast<Index>(*joints);
  KeypointSequence seq;
  seq.fps = fps;
  seq.coords.resize(T, 2 * J);
  seq.confidences.resize(T, J);
  const FramePose* held = &*frames[first_valid];
  for (std::size_t t = 0; t < frames.size(); ++t) {
    if (frames[t]) held = &*frames[t];
    const auto r = static_cast<Index>(t);
    for (Index k = 0; k < 2 * J; ++k) seq.coords(r, k) = held->xy[static_cast<std::size_t>(k)];
    for (Index k = 0; k < J; ++k) seq.confidences(r, k) = held->conf[static_cast<std::size_t>(k)];
  }
  return seq;
}

}  // namespace

void KeypointSequence::validate() const {
  if (!(fps > 0.0)) throw InputError("keypoint fps must be positive");
  if (coords.cols() % 2 != 0) throw InputError("keypoint rows must hold (x, y) pairs");
  if (confidences.size() != 0) {
    if (confidences.rows() != coords.rows() || confidences.cols() != joints()) {
      throw InputError("confidence matrix shape does not match keypoints");
    }
    if ((confidences.array() < 0.0).any() || (confidences.array() > 1.0).any()) {
      throw InputError("keypoint confidences must lie in [0, 1]");
    }
  }
}

KeypointSequence parse_keypoints(const std::filesystem::path& path) {
  std::vector<std::optional<FramePose>> frames;
  double fps = 25.0;
  if (std::filesystem::is_directory(path)) {
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(path)) {
      if (entry.path().extension() == ".json") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (std::size_t i = 0; i < files.size(); ++i) {
      json doc;
      try {
        doc = load_json(files[i]);
      } catch (const ParseError& e) {
        throw ParseError("frame " + std::to_string(i) + ": " + e.what());
      }
      frames.push_back(read_frame(doc, i));
    }
  } else {
    const json doc = load_json(path);
    if (!doc.is_object() || !doc.contains("frames") || !doc["frames"].is_array()) {
      throw ParseError(path.string() + ": expected an object with a 'frames' array");
    }
    if (doc.contains("fps")) {
      if (!doc["fps"].is_number()) throw ParseError(path.string() + ": 'fps' must be a number");
      fps = doc["fps"].get<double>();
    }
    const auto& arr = doc["frames"];
    for (std::size_t i = 0; i < arr.size(); ++i) frames.push_back(read_frame(arr[i], i));
  }
  auto seq = assemble(frames, fps);
  seq.validate();
  return seq;
}

void write_keypoints(const std::filesystem::path& path, const KeypointSequence& seq) {
  seq.validate();
  json doc;
  doc["fps"] = seq.fps;
  json frames = json::array();
  const Index J = seq.joints();
  for (Index t = 0; t < seq.frames(); ++t) {
    json flat = json::array();
    for (Index j = 0; j < J; ++j) {
      flat.push_back(seq.coords(t, 2 * j));
      flat.push_back(seq.coords(t, 2 * j + 1));
      flat.push_back(seq.confidences.size() != 0 ? seq.confidences(t, j) : 1.0);
    }
    frames.push_back({{"people", json::array({{{"pose_keypoints_2d", flat}}})}});
  }
  doc["frames"] = std::move(frames);
  std::ofstream out(path);
  if (!out) throw InputError("cannot write keypoint file: " + path.string());
  out << doc.dump() << '\n';
}

KeypointSequence normalize_keypoints(const KeypointSequence& seq) {
  KeypointSequence out = seq;
  const Index J = seq.joints();
  if (seq.frames() == 0 || J == 0) return out;
  double cx = 0.0, cy = 0.0;
  for (Index j = 0; j < J; ++j) {
    cx += seq.coords.col(2 * j).mean();
    cy += seq.coords.col(2 * j + 1).mean();
  }
  cx /= static_cast<double>(J);
  cy /= static_cast<double>(J);
  double var = 0.0;
  for (Index t = 0; t < seq.frames(); ++t) {
    for (Index j = 0; j < J; ++j) {
      const double dx = seq.coords(t, 2 * j) - cx, dy = seq.coords(t, 2 * j + 1) - cy;
      var += dx * dx + dy * dy;
    }
  }
  const double scale = std::sqrt(var / static_cast<double>(seq.frames() * J));
  const double inv = scale > 0.0 ? 1.0 / scale : 1.0;
  for (Index j = 0; j < J; ++j) {
    out.coords.col(2 * j).array() = (seq.coords.col(2 * j).array() - cx) * inv;
    out.coords.col(2 * j + 1).array() = (seq.coords.col(2 * j + 1).array() - cy) * inv;
  }
  return out;
}

}  // namespace g2s
