#pragma once

#include <array>
#include <cstdint>

namespace keystroke::keycodes {

// Browser key codes that are recorded even though they sit below the
// printable threshold.
inline constexpr std::array<std::int32_t, 7> kTrackedBelowThreshold = {
    0,    // emitted by some punctuation keys
    9,    // tab
    16,   // shift
    17,   // ctrl
    18,   // altgr (alt)
    32,   // space
    225,  // altgr on browsers reporting it separately
};

inline constexpr std::int32_t kPrintableThreshold = 48;

// Codes at or above the threshold that are still ignored: OS keys and F1-F12.
inline constexpr std::array<std::int32_t, 2> kIgnoredOsKeys = {91, 92};
inline constexpr std::int32_t kFirstFunctionKey = 112;
inline constexpr std::int32_t kLastFunctionKey = 123;

constexpr bool is_tracked(std::int32_t code) noexcept {
  for (auto ignored : kIgnoredOsKeys)
    if (code == ignored) return false;
  if (code >= kFirstFunctionKey && code <= kLastFunctionKey) return false;
  for (auto tracked : kTrackedBelowThreshold)
    if (code == tracked) return true;
  return code >= kPrintableThreshold;
}

static_assert(is_tracked(65) && is_tracked(9) && is_tracked(48));
static_assert(!is_tracked(47) && !is_tracked(91) && !is_tracked(116));

}  // namespace keystroke::keycodes
