#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "keystroke/error.hpp"

namespace keystroke::password {

/// Splits UTF-8 text into code points. Bytes that do not start a valid
/// sequence are taken as single code units so that every input has a size.
inline std::vector<char32_t> code_points(std::string_view text) {
  std::vector<char32_t> out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    const auto lead = static_cast<unsigned char>(text[i]);
    std::size_t len = 1;
    char32_t cp = lead;
    if (lead >= 0xC2 && lead <= 0xDF) {
      len = 2;
      cp = lead & 0x1F;
    } else if (lead >= 0xE0 && lead <= 0xEF) {
      len = 3;
      cp = lead & 0x0F;
    } else if (lead >= 0xF0 && lead <= 0xF4) {
      len = 4;
      cp = lead & 0x07;
    }
    bool valid = len == 1 || i + len <= text.size();
    for (std::size_t k = 1; valid && k < len; ++k) {
      const auto cont = static_cast<unsigned char>(text[i + k]);
      if ((cont & 0xC0) != 0x80) valid = false;
      cp = (cp << 6) | (cont & 0x3F);
    }
    if (!valid) {
      len = 1;
      cp = lead;
    }
    out.push_back(cp);
    i += len;
  }
  return out;
}

// Complexity score used by many web password meters: per-character weights
// (lower 1, upper 2, digit 3, other 5) times the sum of the class weights
// present. Empty input scores 0.
inline double complexity(std::string_view password) {
  const auto chars = code_points(password);
  if (chars.empty()) return 0.0;
  int score = 0;
  int low = 0, upp = 0, num = 0, oth = 0;
  for (char32_t c : chars) {
    if (c >= U'a' && c <= U'z') {
      score += 1;
      low = 1;
    } else if (c >= U'A' && c <= U'Z') {
      score += 2;
      upp = 2;
    } else if (c >= U'0' && c <= U'9') {
      score += 3;
      num = 3;
    } else {
      score += 5;
      oth = 5;
    }
  }
  const double size = static_cast<double>(chars.size());
  const double coeff = score / size;
  const int diversity = low + upp + num + oth;
  return coeff * diversity * size;
}

/// Shannon entropy (bits) of the character frequency distribution.
inline double entropy(std::string_view password) {
  const auto chars = code_points(password);
  if (chars.empty()) throw Error(Errc::EmptyPassword, "entropy of an empty password");
  std::map<char32_t, std::size_t> counts;
  for (char32_t c : chars) ++counts[c];
  const double size = static_cast<double>(chars.size());
  double h = 0.0;
  for (const auto& [c, n] : counts) {
    const double p = static_cast<double>(n) / size;
    h -= p * std::log2(p);
  }
  return h == 0.0 ? 0.0 : h;  // avoid -0
}

struct Metrics {
  std::size_t size = 0;
  double entropy = 0.0;
  double complexity = 0.0;

  bool operator==(const Metrics&) const = default;
};

inline Metrics measure(std::string_view password) {
  Metrics m;
  m.size = code_points(password).size();
  m.entropy = m.size == 0 ? 0.0 : entropy(password);
  m.complexity = complexity(password);
  return m;
}

inline constexpr std::size_t kSizeThreshold = 8;
inline constexpr double kEntropyThreshold = 2.7;

enum class SizeClass { AboveSize, BelowSize };
enum class EntropyClass { AboveEntropy, BelowEntropy };

struct Classification {
  SizeClass size;
  EntropyClass entropy;

  friend bool operator==(const Classification&, const Classification&) = default;
};

// Both comparisons are strict: "more than" the threshold.
inline Classification classify(const Metrics& m, std::size_t size_threshold = kSizeThreshold,
                               double entropy_threshold = kEntropyThreshold) {
  return {m.size > size_threshold ? SizeClass::AboveSize : SizeClass::BelowSize,
          m.entropy > entropy_threshold ? EntropyClass::AboveEntropy
                                        : EntropyClass::BelowEntropy};
}

}  // namespace keystroke::password
