#include "g2s/alignment/wer.hpp"

#include <cctype>

namespace g2s {

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) words.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return words;
}

std::vector<char32_t> code_points(std::string_view text) {
  std::vector<char32_t> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    std::size_t len = 1;
    char32_t cp = c;
    if (c >= 0xF0) {
      len = 4;
      cp = c & 0x07u;
    } else if (c >= 0xE0) {
      len = 3;
      cp = c & 0x0Fu;
    } else if (c >= 0xC0) {
      len = 2;
      cp = c & 0x1Fu;
    }
    bool ok = len > 1 && i + len <= text.size();
    for (std::size_t k = 1; ok && k < len; ++k) {
      const auto cc = static_cast<unsigned char>(text[i + k]);
      if ((cc & 0xC0u) != 0x80u) ok = false;
      cp = (cp << 6) | (cc & 0x3Fu);
    }
    if (!ok) {
      cp = c;
      len = 1;
    }
    out.push_back(cp);
    i += len;
  }
  return out;
}

std::optional<ErrorRates> wer_cer(std::string_view reference, std::string_view hypothesis) {
  const auto rw = split_words(reference);
  if (rw.empty()) return std::nullopt;
  const auto hw = split_words(hypothesis);
  const auto rc = code_points(reference);
  const auto hc = code_points(hypothesis);
  ErrorRates e;
  e.wer = 100.0 * static_cast<double>(edit_distance<std::string>(rw, hw)) / static_cast<double>(rw.size());
  e.cer = 100.0 * static_cast<double>(edit_distance<char32_t>(rc, hc)) / static_cast<double>(rc.size());
  return e;
}

}  // namespace g2s
