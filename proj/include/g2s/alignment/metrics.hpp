#pragma once

#include <optional>
#include <span>
#include <vector>

#include "g2s/core/tensor.hpp"

namespace g2s {

struct PeakPair {
  double gesture_t = 0.0;
  double speech_t = 0.0;

  bool operator==(const PeakPair&) const = default;
};

/// Greedy one-to-one matching: apexes in ascending order each take the
/// nearest unused prominence (earlier on ties); pairs further apart than
/// max_lag are discarded and leave the prominence unused. Inputs must be
/// ascending (ContractError otherwise).
std::vector<PeakPair> match_peaks(std::span<const double> apexes, std::span<const double> prominences,
                                  double max_lag = 1.0);

// Mean |gesture_t - speech_t|; nullopt when there are no pairs.
std::optional<double> gesture_offset(std::span<const PeakPair> pairs);

/// Bin occupancy over [0, duration] in n_bins uniform bins (1 where at least
/// one event falls in the bin). Events outside the interval are ignored.
std::vector<int> occupancy(std::span<const double> times, double duration, int n_bins);

// Shannon entropy in bits of a binary occupancy sequence.
double occupancy_entropy(std::span<const int> bits);

/// Mutual information in bits between the occupancy sequences of two event
/// streams, from their 2x2 joint histogram over bins, clamped at 0.
double mutual_information(std::span<const double> a, std::span<const double> b, double duration, int n_bins = 50);

/// (1/B) sum |t_pred - t_gesture|. ContractError on length mismatch or B = 0.
double cmtd_loss(std::span<const double> t_pred, std::span<const double> t_gesture);

// Differentiable form over a B x 1 prediction.
DTensor cmtd_loss(const DTensor& t_pred, std::span<const double> t_gesture);

}  // namespace g2s
