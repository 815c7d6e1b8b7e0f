#pragma once

#include <array>
#include <string_view>

namespace g2s::testing {

// Hand-computed edit distances. CER counts every code point, spaces
// included; cer_edits / cer_len and wer_edits / wer_len give the rates.
struct WerCase {
  std::string_view ref;
  std::string_view hyp;
  int wer_edits, wer_len;
  int cer_edits, cer_len;
};

inline constexpr std::array<WerCase, 20> kWerCases{{
    {"a b c", "a x c", 1, 3, 1, 5},
    {"a b c", "a b c", 0, 3, 0, 5},
    {"a b c", "", 3, 3, 5, 5},
    {"the cat sat", "the cat sat on the mat", 3, 3, 11, 11},
    {"hello world", "hello", 1, 2, 6, 11},
    {"a b", "b a", 2, 2, 2, 3},
    {"kitten", "sitting", 1, 1, 3, 6},
    {"one two three four", "one three four", 1, 4, 4, 18},
    {"x", "y", 1, 1, 1, 1},
    {"a a a", "a a", 1, 3, 2, 5},
    {"abc", "abd", 1, 1, 1, 3},
    {"caf\xc3\xa9", "cafe", 1, 1, 1, 4},
    {"good morning", "good evening", 1, 2, 3, 12},
    {"flaw", "lawn", 1, 1, 2, 4},
    {"a", "a b c d", 3, 1, 6, 1},
    {"to be or not to be", "to be or to be", 1, 6, 4, 18},
    {"red green blue", "blue green red", 2, 3, 8, 14},
    {"speech", "speeches", 1, 1, 2, 6},
    {"we meet at noon", "we met at noon", 1, 4, 1, 15},
    {"abc def", "abcdef", 2, 2, 1, 7},
}};

}  // namespace g2s::testing
