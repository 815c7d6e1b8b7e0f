#include "g2s/alignment/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "g2s/core/ops.hpp"

namespace g2s {
namespace {

bool ascending(std::span<const double> v) { return std::is_sorted(v.begin(), v.end()); }

// -p log2 p for a cell count out of n.
double plogp(int count, int n) {
  if (count == 0) return 0.0;
  const double p = static_cast<double>(count) / n;
  return -p * std::log2(p);
}

}  // namespace

std::vector<PeakPair> match_peaks(std::span<const double> apexes, std::span<const double> prominences, double max_lag) {
  if (!ascending(apexes) || !ascending(prominences)) throw ContractError("match_peaks: inputs must be ascending");
  std::vector<PeakPair> pairs;
  std::vector<bool> used(prominences.size(), false);
  for (double g : apexes) {
    std::size_t best = prominences.size();
    double best_d = 0.0;
    for (std::size_t j = 0; j < prominences.size(); ++j) {
      if (used[j]) continue;
      const double d = std::abs(prominences[j] - g);
      if (best == prominences.size() || d < best_d) {
        best = j;
        best_d = d;
      }
    }
    if (best == prominences.size() || best_d > max_lag) continue;
    used[best] = true;
    pairs.push_back({g, prominences[best]});
  }
  return pairs;
}

std::optional<double> gesture_offset(std::span<const PeakPair> pairs) {
  if (pairs.empty()) return std::nullopt;
  double acc = 0.0;
  for (const auto& p : pairs) acc += std::abs(p.gesture_t - p.speech_t);
  return acc / static_cast<double>(pairs.size());
}

std::vector<int> occupancy(std::span<const double> times, double duration, int n_bins) {
  if (!(duration > 0.0)) throw ContractError("occupancy: duration must be positive");
  if (n_bins < 2) throw ContractError("occupancy: need at least 2 bins");
  std::vector<int> bits(static_cast<std::size_t>(n_bins), 0);
  for (double t : times) {
    if (!(t >= 0.0 && t <= duration)) continue;
    const auto b = std::min(n_bins - 1, static_cast<int>(std::floor(t / duration * n_bins)));
    bits[static_cast<std::size_t>(b)] = 1;
  }
  return bits;
}

double occupancy_entropy(std::span<const int> bits) {
  const int n = static_cast<int>(bits.size());
  if (n == 0) return 0.0;
  const int ones = static_cast<int>(std::count(bits.begin(), bits.end(), 1));
  return plogp(n - ones, n) + plogp(ones, n);
}

double mutual_information(std::span<const double> a, std::span<const double> b, double duration, int n_bins) {
  const auto x = occupancy(a, duration, n_bins);
  const auto y = occupancy(b, duration, n_bins);
  int n00 = 0, n01 = 0, n10 = 0, n11 = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] == 0 && y[i] == 0) ++n00;
    if (x[i] == 0 && y[i] == 1) ++n01;
    if (x[i] == 1 && y[i] == 0) ++n10;
    if (x[i] == 1 && y[i] == 1) ++n11;
  }
  const int n = n_bins;
  const double hx = plogp(n00 + n01, n) + plogp(n10 + n11, n);
  const double hy = plogp(n00 + n10, n) + plogp(n01 + n11, n);
  // Agreeing cells first, then disagreeing: with identical streams this is
  // the same sum as hx, and swapping the streams only reorders the second
  // group, so both properties hold exactly.
  const double hxy = (plogp(n00, n) + plogp(n11, n)) + (plogp(n01, n) + plogp(n10, n));
  return std::max(0.0, hx + hy - hxy);
}

double cmtd_loss(std::span<const double> t_pred, std::span<const double> t_gesture) {
  if (t_pred.size() != t_gesture.size()) throw ContractError("cmtd_loss: batch lengths differ");
  if (t_pred.empty()) throw ContractError("cmtd_loss: empty batch");
  double acc = 0.0;
  for (std::size_t i = 0; i < t_pred.size(); ++i) acc += std::abs(t_pred[i] - t_gesture[i]);
  return acc / static_cast<double>(t_pred.size());
}

DTensor cmtd_loss(const DTensor& t_pred, std::span<const double> t_gesture) {
  if (t_pred.cols() != 1 || static_cast<std::size_t>(t_pred.rows()) != t_gesture.size()) {
    throw ContractError("cmtd_loss: batch lengths differ");
  }
  if (t_gesture.empty()) throw ContractError("cmtd_loss: empty batch");
  MatrixD target(t_pred.rows(), 1);
  for (Index i = 0; i < target.rows(); ++i) target(i, 0) = t_gesture[static_cast<std::size_t>(i)];
  return mean(abs(t_pred - t_pred.tape().constant(std::move(target))));
}

}  // namespace g2s
