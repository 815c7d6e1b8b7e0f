#include "g2s/alignment/pitch.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>

#include <unsupported/Eigen/FFT>

#include "g2s/core/errors.hpp"

namespace g2s {

PitchContour extract_pitch(std::span<const double> samples, double sample_rate, const PitchOptions& opt) {
  if (sample_rate < 8000.0) throw ContractError("pitch tracking needs a sample rate of at least 8 kHz");
  if (!(opt.f0_min > 0.0 && opt.f0_max > opt.f0_min)) throw ContractError("pitch range must satisfy 0 < f0_min < f0_max");
  if (!(opt.frame > 2.0 / opt.f0_min)) throw ContractError("pitch frame must span more than two periods of f0_min");
  if (!(opt.hop > 0.0)) throw ContractError("pitch hop must be positive");

  PitchContour pc;
  pc.hop = opt.hop;
  const auto N = static_cast<std::size_t>(std::llround(opt.frame * sample_rate));
  const auto hop = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(opt.hop * sample_rate)));
  if (samples.size() < N) return pc;
  const std::size_t frames = 1 + (samples.size() - N) / hop;

  const auto lag_min = std::max<std::size_t>(2, static_cast<std::size_t>(std::floor(sample_rate / opt.f0_max)));
  const auto lag_max = std::min<std::size_t>(N - 2, static_cast<std::size_t>(std::ceil(sample_rate / opt.f0_min)));
  std::size_t nfft = 1;
  while (nfft < 2 * N) nfft <<= 1;

  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<double> buf(nfft), acf(nfft), energy(N + 1);
  std::vector<std::complex<double>> spec;
  std::vector<double> r(lag_max + 2);

  pc.frame_times.reserve(frames);
  pc.f0.reserve(frames);
  pc.voiced.reserve(frames);
  for (std::size_t f = 0; f < frames; ++f) {
    const double* x = samples.data() + f * hop;
    pc.frame_times.push_back((static_cast<double>(f * hop) + 0.5 * static_cast<double>(N)) / sample_rate);

    energy[0] = 0.0;
    for (std::size_t i = 0; i < N; ++i) energy[i + 1] = energy[i] + x[i] * x[i];
    double f0 = 0.0;
    if (energy[N] > 1e-10 * static_cast<double>(N)) {
      std::fill(buf.begin(), buf.end(), 0.0);
      std::copy(x, x + N, buf.begin());
      fft.fwd(spec, buf);
      for (auto& c : spec) c = std::norm(c);
      fft.inv(acf, spec);
      for (std::size_t tau = lag_min - 1; tau <= lag_max + 1; ++tau) {
        const double e = (energy[N - tau] - energy[0]) * (energy[N] - energy[tau]);
        r[tau] = e > 0.0 ? acf[tau] / std::sqrt(e) : 0.0;
      }
      double best = -1.0;
      for (std::size_t tau = lag_min; tau <= lag_max; ++tau) {
        if (r[tau] >= r[tau - 1] && r[tau] >= r[tau + 1]) best = std::max(best, r[tau]);
      }
      if (best > 0.0) {
        std::size_t pick = 0;
        for (std::size_t tau = lag_min; tau <= lag_max; ++tau) {
          if (r[tau] >= r[tau - 1] && r[tau] >= r[tau + 1] && r[tau] >= opt.octave_ratio * best) {
            pick = tau;
            break;
          }
        }
        if (r[pick] >= opt.voicing_threshold) {
          const double a = r[pick - 1], b = r[pick], c = r[pick + 1];
          const double den = a - 2.0 * b + c;
          const double delta = den < 0.0 ? std::clamp(0.5 * (a - c) / den, -0.5, 0.5) : 0.0;
          f0 = sample_rate / (static_cast<double>(pick) + delta);
        }
      }
    }
    pc.f0.push_back(f0);
    pc.voiced.push_back(f0 > 0.0);
  }
  return pc;
}

std::vector<double> detect_prominences(const PitchContour& pc, double min_gap, double min_prominence_hz) {
  const std::size_t n = pc.f0.size();
  struct Peak {
    std::size_t frame;
    double f0;
  };
  std::vector<Peak> peaks;
  std::size_t i = 0;
  while (i < n) {
    if (!pc.voiced[i]) {
      ++i;
      continue;
    }
    std::size_t a = i;  // voiced region [a, b)
    std::size_t b = a;
    while (b < n && pc.voiced[b]) ++b;
    for (std::size_t k = a + 1; k + 1 < b; ++k) {
      if (!(pc.f0[k] > pc.f0[k - 1])) continue;
      std::size_t e = k;  // plateau end
      while (e + 1 < b && pc.f0[e + 1] == pc.f0[k]) ++e;
      if (e + 1 >= b || !(pc.f0[e + 1] < pc.f0[k])) continue;
      const double h = pc.f0[k];
      double left = h;
      for (std::size_t j = k; j-- > a && pc.f0[j] <= h;) left = std::min(left, pc.f0[j]);
      double right = h;
      for (std::size_t j = e + 1; j < b && pc.f0[j] <= h; ++j) right = std::min(right, pc.f0[j]);
      if (h - std::max(left, right) >= min_prominence_hz) peaks.push_back({(k + e) / 2, h});
      k = e;
    }
    i = b;
  }

  std::vector<std::size_t> order(peaks.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return peaks[x].f0 > peaks[y].f0; });
  std::vector<double> kept;
  for (std::size_t idx : order) {
    const double t = pc.frame_times[peaks[idx].frame];
    const bool clash = std::any_of(kept.begin(), kept.end(), [&](double s) { return std::abs(s - t) < min_gap; });
    if (!clash) kept.push_back(t);
  }
  std::sort(kept.begin(), kept.end());
  return kept;
}

}  // namespace g2s
