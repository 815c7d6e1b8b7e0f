#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace g2s {

/// Levenshtein distance with unit insertion, deletion and substitution
/// costs, two-row dynamic programme.
template <typename T>
std::size_t edit_distance(std::span<const T> ref, std::span<const T> hyp) {
  std::vector<std::size_t> prev(hyp.size() + 1), cur(hyp.size() + 1);
  for (std::size_t j = 0; j <= hyp.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= ref.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= hyp.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[hyp.size()];
}

// Whitespace-separated words.
std::vector<std::string> split_words(std::string_view text);

// UTF-8 decoded code points; invalid bytes map to themselves.
std::vector<char32_t> code_points(std::string_view text);

struct ErrorRates {
  double wer = 0.0;  // percent
  double cer = 0.0;  // percent, over code points including spaces
};

/// Edit distance over words and characters divided by the reference length,
/// times 100. nullopt when the reference has no words.
std::optional<ErrorRates> wer_cer(std::string_view reference, std::string_view hypothesis);

}  // namespace g2s
