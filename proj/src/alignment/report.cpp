#include "g2s/alignment/report.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "json.hpp"

namespace g2s {
namespace {

std::string fmt(double v, const char* spec = "%.3f") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

struct Panel {
  double x0, y0, w, h;  // pixel box
  double t_max, v_max;
  double px(double t) const { return x0 + w * t / t_max; }
  double py(double v) const { return y0 + h - h * v / v_max; }
};

void polyline(std::ostringstream& out, const Panel& p, const std::vector<double>& t, const std::vector<double>& v,
              const char* colour) {
  out << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1\" points=\"";
  for (std::size_t i = 0; i < t.size(); ++i) out << fmt(p.px(t[i]), "%.2f") << ',' << fmt(p.py(v[i]), "%.2f") << ' ';
  out << "\"/>\n";
}

void marker(std::ostringstream& out, const Panel& p, double t, const char* colour) {
  out << "<line x1=\"" << fmt(p.px(t), "%.2f") << "\" y1=\"" << fmt(p.y0, "%.2f") << "\" x2=\"" << fmt(p.px(t), "%.2f")
      << "\" y2=\"" << fmt(p.y0 + p.h, "%.2f") << "\" stroke=\"" << colour << "\" stroke-width=\"1.5\"/>\n";
}

}  // namespace

AlignmentReport analyze_clip(const std::string& clip_id, const KeypointSequence& kp, const AudioClip& audio,
                             const AnalysisOptions& o) {
  AlignmentReport r;
  r.clip_id = clip_id;
  const AudioClip clip = audio.sample_rate == o.sample_rate ? audio : resample(audio, o.sample_rate);
  r.duration = clip.duration();
  r.magnitude = motion_magnitude(kp);
  r.apexes = detect_apexes(r.magnitude, o.rel_threshold, o.apex_min_gap);
  r.pitch = extract_pitch(std::span<const double>(clip.samples.data(), static_cast<std::size_t>(clip.samples.size())),
                          clip.sample_rate, o.pitch);
  r.prominences = detect_prominences(r.pitch, o.prominence_min_gap, o.min_prominence_hz);
  r.matched_pairs = match_peaks(r.apexes.times, r.prominences, o.max_lag);
  r.gesture_offset = gesture_offset(r.matched_pairs);
  r.mutual_info = r.duration > 0.0 ? mutual_information(r.apexes.times, r.prominences, r.duration, o.n_bins) : 0.0;
  for (std::size_t i = r.pitch.size(); i-- > 0;) {
    if (r.pitch.voiced[i]) {
      if (!r.apexes.times.empty()) r.cmtd = std::abs(r.pitch.frame_times[i] - r.apexes.times.back());
      break;
    }
  }
  return r;
}

std::string report_json(const AlignmentReport& r) {
  using nlohmann::json;
  json pairs = json::array();
  for (const auto& p : r.matched_pairs) pairs.push_back({p.gesture_t, p.speech_t});
  json doc = {{"clip_id", r.clip_id},
              {"duration_s", r.duration},
              {"apex_times_s", r.apexes.times},
              {"apex_magnitudes", r.apexes.magnitudes},
              {"prominence_times_s", r.prominences},
              {"matched_pairs", pairs},
              {"gesture_offset_s", r.gesture_offset ? json(*r.gesture_offset) : json(nullptr)},
              {"mutual_info_bits", r.mutual_info},
              {"cmtd_s", r.cmtd ? json(*r.cmtd) : json(nullptr)}};
  return doc.dump(2) + "\n";
}

std::string report_csv_header() { return "clip_id,offset_s,mi_bits,cmtd_s,n_apexes,n_peaks\n"; }

std::string report_csv_row(const AlignmentReport& r) {
  std::ostringstream out;
  out << r.clip_id << ',' << (r.gesture_offset ? fmt(*r.gesture_offset, "%.6f") : "") << ','
      << fmt(r.mutual_info, "%.6f") << ',' << (r.cmtd ? fmt(*r.cmtd, "%.6f") : "") << ',' << r.apexes.size() << ','
      << r.prominences.size() << '\n';
  return out.str();
}

std::string report_svg(const AlignmentReport& r) {
  constexpr double kW = 900, kH = 460, kPad = 50, kPanel = 160;
  const double t_max = std::max({r.duration, r.magnitude.values.size() / std::max(r.magnitude.fps, 1e-9), 1e-3});

  std::vector<double> mt(r.magnitude.values.size());
  for (std::size_t i = 0; i < mt.size(); ++i) mt[i] = r.magnitude.time(i);
  double m_max = 1e-9;
  for (double v : r.magnitude.values) m_max = std::max(m_max, v);
  double f_max = 1e-9;
  for (double f : r.pitch.f0) f_max = std::max(f_max, f);

  const Panel top{kPad, kPad, kW - 2 * kPad, kPanel, t_max, m_max * 1.05};
  const Panel bottom{kPad, 2 * kPad + kPanel + 20, kW - 2 * kPad, kPanel, t_max, f_max * 1.05};

  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << kPad << "\" y=\"" << kPad - 10 << "\">" << r.clip_id << ": motion magnitude and apexes</text>\n";
  out << "<text x=\"" << kPad << "\" y=\"" << bottom.y0 - 10 << "\">f0 (Hz) and pitch prominences</text>\n";
  for (const Panel* p : {&top, &bottom}) {
    out << "<rect x=\"" << p->x0 << "\" y=\"" << p->y0 << "\" width=\"" << p->w << "\" height=\"" << p->h
        << "\" fill=\"none\" stroke=\"#999\"/>\n";
  }
  polyline(out, top, mt, r.magnitude.values, "#1f77b4");
  for (double t : r.apexes.times) marker(out, top, t, "#d62728");

  // Voiced runs only, so unvoiced gaps do not draw as drops to zero.
  std::vector<double> seg_t, seg_f;
  for (std::size_t i = 0; i <= r.pitch.size(); ++i) {
    if (i < r.pitch.size() && r.pitch.voiced[i]) {
      seg_t.push_back(r.pitch.frame_times[i]);
      seg_f.push_back(r.pitch.f0[i]);
    } else if (!seg_t.empty()) {
      polyline(out, bottom, seg_t, seg_f, "#2ca02c");
      seg_t.clear();
      seg_f.clear();
    }
  }
  for (double t : r.prominences) marker(out, bottom, t, "#9467bd");
  for (const auto& p : r.matched_pairs) {
    out << "<line x1=\"" << fmt(top.px(p.gesture_t), "%.2f") << "\" y1=\"" << fmt(top.y0 + top.h, "%.2f") << "\" x2=\""
        << fmt(bottom.px(p.speech_t), "%.2f") << "\" y2=\"" << fmt(bottom.y0, "%.2f")
        << "\" stroke=\"#555\" stroke-dasharray=\"4,3\"/>\n";
  }
  out << "<text x=\"" << kPad << "\" y=\"" << kH - 12 << "\">time (s), 0 to " << fmt(t_max, "%.2f") << "; offset "
      << (r.gesture_offset ? fmt(*r.gesture_offset, "%.4f") + " s" : std::string("undefined")) << "; MI "
      << fmt(r.mutual_info, "%.4f") << " bits</text>\n";
  out << "</svg>\n";
  return out.str();
}

}  // namespace g2s
