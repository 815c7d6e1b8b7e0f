#include "g2s/dataio/wav.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "g2s/core/errors.hpp"

namespace g2s {
namespace {

static_assert(std::endian::native == std::endian::little, "WAV IO assumes a little-endian host");

struct WavFormat {
  std::uint16_t tag = 0;
  std::uint16_t channels = 0;
  std::uint32_t rate = 0;
  std::uint16_t bits = 0;
  std::uint32_t data_bytes = 0;
  std::streampos data_offset = 0;
};

template <typename T>
T read_le(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

WavFormat read_header(std::ifstream& in, const std::filesystem::path& path) {
  char riff[4], wave[4];
  in.read(riff, 4);
  read_le<std::uint32_t>(in);
  in.read(wave, 4);
  if (!in || std::memcmp(riff, "RIFF", 4) != 0 || std::memcmp(wave, "WAVE", 4) != 0) {
    throw FormatError(path.string() + ": not a RIFF/WAVE file");
  }
  WavFormat fmt;
  bool have_fmt = false;
  while (in) {
    char id[4];
    in.read(id, 4);
    const auto size = read_le<std::uint32_t>(in);
    if (!in) break;
    const auto body = in.tellg();
    if (std::memcmp(id, "fmt ", 4) == 0) {
      fmt.tag = read_le<std::uint16_t>(in);
      fmt.channels = read_le<std::uint16_t>(in);
      fmt.rate = read_le<std::uint32_t>(in);
      read_le<std::uint32_t>(in);  // byte rate
      read_le<std::uint16_t>(in);  // block align
      fmt.bits = read_le<std::uint16_t>(in);
      if (fmt.tag == 0xFFFE && size >= 40) {
        read_le<std::uint16_t>(in);  // cbSize
        read_le<std::uint16_t>(in);  // valid bits
        read_le<std::uint32_t>(in);  // channel mask
        fmt.tag = read_le<std::uint16_t>(in);  // sub-format GUID leading bytes
      }
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      if (!have_fmt) throw FormatError(path.string() + ": data chunk precedes fmt chunk");
      fmt.data_bytes = size;
      fmt.data_offset = body;
      const bool pcm16 = fmt.tag == 1 && fmt.bits == 16;
      const bool f32 = fmt.tag == 3 && fmt.bits == 32;
      if (!pcm16 && !f32) {
        throw FormatError(path.string() + ": unsupported encoding (tag " + std::to_string(fmt.tag) + ", " +
                          std::to_string(fmt.bits) + " bits); need PCM-16 or float-32");
      }
      if (fmt.channels != 1 && fmt.channels != 2) {
        throw FormatError(path.string() + ": unsupported channel count " + std::to_string(fmt.channels));
      }
      if (fmt.rate == 0) throw FormatError(path.string() + ": zero sample rate");
      return fmt;
    }
    in.seekg(body + static_cast<std::streamoff>(size + (size & 1u)));
  }
  throw FormatError(path.string() + ": no data chunk");
}

template <typename T>
void write_le(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

}  // namespace

AudioClip read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open WAV file: " + path.string());
  const auto fmt = read_header(in, path);
  in.seekg(fmt.data_offset);
  const std::size_t bytes_per = fmt.bits / 8;
  const std::size_t frames = fmt.data_bytes / (bytes_per * fmt.channels);
  std::vector<char> raw(frames * bytes_per * fmt.channels);
  in.read(raw.data(), static_cast<std::streamsize>(raw.size()));
  if (!in) throw FormatError(path.string() + ": truncated data chunk");

  AudioClip clip;
  clip.sample_rate = fmt.rate;
  clip.samples.resize(static_cast<Eigen::Index>(frames));
  for (std::size_t f = 0; f < frames; ++f) {
    double acc = 0.0;
    for (std::size_t c = 0; c < fmt.channels; ++c) {
      const char* p = raw.data() + (f * fmt.channels + c) * bytes_per;
      if (fmt.tag == 1) {
        std::int16_t v;
        std::memcpy(&v, p, 2);
        acc += static_cast<double>(v) / 32768.0;
      } else {
        float v;
        std::memcpy(&v, p, 4);
        acc += static_cast<double>(v);
      }
    }
    clip.samples(static_cast<Eigen::Index>(f)) = acc / fmt.channels;
  }
  return clip;
}

double wav_duration(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open WAV file: " + path.string());
  const auto fmt = read_header(in, path);
  const double frames = static_cast<double>(fmt.data_bytes) / (fmt.bits / 8 * fmt.channels);
  return frames / fmt.rate;
}

void write_wav(const std::filesystem::path& path, const AudioClip& clip, WavEncoding encoding) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write WAV file: " + path.string());
  const bool pcm = encoding == WavEncoding::kPcm16;
  const std::uint16_t bits = pcm ? 16 : 32;
  const auto rate = static_cast<std::uint32_t>(std::lround(clip.sample_rate));
  const auto data_bytes = static_cast<std::uint32_t>(clip.samples.size() * bits / 8);
  out.write("RIFF", 4);
  write_le<std::uint32_t>(out, 36 + data_bytes);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  write_le<std::uint32_t>(out, 16);
  write_le<std::uint16_t>(out, pcm ? 1 : 3);
  write_le<std::uint16_t>(out, 1);
  write_le<std::uint32_t>(out, rate);
  write_le<std::uint32_t>(out, rate * bits / 8);
  write_le<std::uint16_t>(out, bits / 8);
  write_le<std::uint16_t>(out, bits);
  out.write("data", 4);
  write_le<std::uint32_t>(out, data_bytes);
  for (Eigen::Index i = 0; i < clip.samples.size(); ++i) {
    const double s = clip.samples(i);
    if (pcm) {
      const double c = std::clamp(s, -1.0, 32767.0 / 32768.0);
      write_le<std::int16_t>(out, static_cast<std::int16_t>(std::lround(c * 32768.0)));
    } else {
      write_le<float>(out, static_cast<float>(s));
    }
  }
  if (!out) throw InputError("failed writing WAV file: " + path.string());
}

AudioClip resample(const AudioClip& clip, double target_rate) {
  if (!(target_rate > 0.0) || !(clip.sample_rate > 0.0)) throw InputError("sample rates must be positive");
  if (target_rate == clip.sample_rate) return clip;

  constexpr int kHalfTaps = 32;  // zero crossings on each side
  constexpr double kBeta = 8.6;
  const double ratio = target_rate / clip.sample_rate;
  const double cutoff = std::min(1.0, ratio);  // relative to the input Nyquist
  const double half_width = kHalfTaps / cutoff;  // in input samples
  const double i0_beta = std::cyl_bessel_i(0.0, kBeta);
  // Kaiser window sampled on |r| in [0, 1], linearly interpolated.
  constexpr int kTable = 8192;
  std::vector<double> kaiser(kTable + 2, 0.0);
  for (int i = 0; i <= kTable; ++i) {
    const double r = static_cast<double>(i) / kTable;
    kaiser[static_cast<std::size_t>(i)] = std::cyl_bessel_i(0.0, kBeta * std::sqrt(std::max(0.0, 1.0 - r * r))) / i0_beta;
  }
  const auto n_in = clip.samples.size();
  const auto n_out = static_cast<Eigen::Index>(std::llround(static_cast<double>(n_in) * ratio));

  AudioClip out;
  out.sample_rate = target_rate;
  out.samples.resize(n_out);
  for (Eigen::Index n = 0; n < n_out; ++n) {
    const double center = static_cast<double>(n) / ratio;
    const auto lo = std::max<Eigen::Index>(0, static_cast<Eigen::Index>(std::ceil(center - half_width)));
    const auto hi = std::min<Eigen::Index>(n_in - 1, static_cast<Eigen::Index>(std::floor(center + half_width)));
    double acc = 0.0;
    for (Eigen::Index k = lo; k <= hi; ++k) {
      const double x = center - static_cast<double>(k);
      const double r = x / half_width;
      if (std::abs(r) > 1.0) continue;
      const double arg = std::numbers::pi * cutoff * x;
      const double sinc = x == 0.0 ? 1.0 : std::sin(arg) / arg;
      const double pos = std::abs(r) * kTable;
      const auto i0 = static_cast<std::size_t>(pos);
      const double frac = pos - static_cast<double>(i0);
      const double window = kaiser[i0] + frac * (kaiser[i0 + 1] - kaiser[i0]);
      acc += clip.samples(k) * cutoff * sinc * window;
    }
    out.samples(n) = acc;
  }
  return out;
}

}  // namespace g2s
