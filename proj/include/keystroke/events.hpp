#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "keystroke/error.hpp"
#include "keystroke/keycodes.hpp"

namespace keystroke {

using Millis = std::int64_t;

enum class EventKind { Press, Release };

enum class Field { Login, Password };

// Declaration order is the canonical report and fusion order.
enum class FeatureKind { PR, RP, RR, PP };

inline constexpr std::array<Field, 2> kAllFields = {Field::Login, Field::Password};
inline constexpr std::array<FeatureKind, 4> kAllKinds = {FeatureKind::PR, FeatureKind::RP,
                                                         FeatureKind::RR, FeatureKind::PP};

constexpr std::string_view to_string(Field f) noexcept {
  return f == Field::Login ? "login" : "password";
}

constexpr std::string_view to_string(FeatureKind k) noexcept {
  switch (k) {
    case FeatureKind::PR: return "pr";
    case FeatureKind::RP: return "rp";
    case FeatureKind::RR: return "rr";
    case FeatureKind::PP: return "pp";
  }
  return "?";
}

inline std::optional<FeatureKind> parse_feature_kind(std::string_view s) {
  for (auto k : kAllKinds)
    if (to_string(k) == s) return k;
  return std::nullopt;
}

struct KeyEvent {
  std::int32_t keycode = 0;
  EventKind kind = EventKind::Press;
  Millis timestamp = 0;

  friend bool operator==(const KeyEvent&, const KeyEvent&) = default;
};

struct EventStream {
  Field field = Field::Login;
  std::vector<KeyEvent> events;

  friend bool operator==(const EventStream&, const EventStream&) = default;
};

struct KeyStroke {
  KeyEvent press;
  KeyEvent release;
};

// A feature part identifies one of the eight (field, kind) sub-samples.
struct Part {
  Field field = Field::Login;
  FeatureKind kind = FeatureKind::PR;

  friend auto operator<=>(const Part&, const Part&) = default;
};

inline std::string to_string(Part p) {
  return std::string(to_string(p.kind)) + "/" + std::string(to_string(p.field));
}

// Canonical order: (login, password) x (PR, RP, RR, PP).
inline constexpr std::array<Part, 8> kAllParts = {
    Part{Field::Login, FeatureKind::PR},    Part{Field::Login, FeatureKind::RP},
    Part{Field::Login, FeatureKind::RR},    Part{Field::Login, FeatureKind::PP},
    Part{Field::Password, FeatureKind::PR}, Part{Field::Password, FeatureKind::RP},
    Part{Field::Password, FeatureKind::RR}, Part{Field::Password, FeatureKind::PP},
};

// Timing values stay integral; they only become real numbers when scored.
struct FeatureVector {
  FeatureKind kind = FeatureKind::PR;
  Field field = Field::Login;
  std::vector<Millis> values;

  std::size_t size() const noexcept { return values.size(); }
  Part part() const noexcept { return {field, kind}; }

  friend bool operator==(const FeatureVector&, const FeatureVector&) = default;
};

/// Drops events for untracked keys (below code 48 apart from the tracked
/// modifiers, OS keys, F1-F12). Order is preserved.
inline EventStream filter_tracked_events(const EventStream& stream) {
  EventStream out{stream.field, {}};
  out.events.reserve(stream.events.size());
  std::copy_if(stream.events.begin(), stream.events.end(), std::back_inserter(out.events),
               [](const KeyEvent& e) { return keycodes::is_tracked(e.keycode); });
  return out;
}

/// Pairs every press with the next release of the same key.
///
/// Repeated presses of a key that is already down (auto-repeat) collapse
/// into the first one. The result is ordered by press time, ties broken by
/// position in the stream. Throws Errc::UnmatchedEvent for a release with
/// no open press or a press that never closes.
inline std::vector<KeyStroke> pair_press_release(const EventStream& stream) {
  struct Open {
    KeyEvent press;
    std::size_t order;
  };
  struct Closed {
    KeyStroke stroke;
    std::size_t order;
  };
  std::unordered_map<std::int32_t, Open> open;
  std::vector<Closed> closed;
  closed.reserve(stream.events.size() / 2);

  for (std::size_t i = 0; i < stream.events.size(); ++i) {
    const auto& e = stream.events[i];
    if (e.kind == EventKind::Press) {
      open.try_emplace(e.keycode, Open{e, i});
      continue;
    }
    auto it = open.find(e.keycode);
    if (it == open.end())
      throw Error(Errc::UnmatchedEvent,
                  "release of keycode " + std::to_string(e.keycode) + " without a prior press");
    closed.push_back({{it->second.press, e}, it->second.order});
    open.erase(it);
  }
  if (!open.empty()) {
    auto first = std::min_element(open.begin(), open.end(), [](const auto& a, const auto& b) {
      return a.second.order < b.second.order;
    });
    throw Error(Errc::UnmatchedEvent,
                "press of keycode " + std::to_string(first->first) + " never released");
  }

  std::sort(closed.begin(), closed.end(), [](const Closed& a, const Closed& b) {
    if (a.stroke.press.timestamp != b.stroke.press.timestamp)
      return a.stroke.press.timestamp < b.stroke.press.timestamp;
    return a.order < b.order;
  });
  std::vector<KeyStroke> strokes;
  strokes.reserve(closed.size());
  for (auto& c : closed) strokes.push_back(c.stroke);
  return strokes;
}

/// Checks timestamp sanity and pairability of an already filtered stream.
/// Returns the keystrokes so callers do not pair twice.
inline std::vector<KeyStroke> validate_stream(const EventStream& stream) {
  Millis previous = 0;
  for (const auto& e : stream.events) {
    if (e.timestamp < 0)
      throw Error(Errc::MalformedStream, "negative timestamp " + std::to_string(e.timestamp));
    if (e.timestamp < previous)
      throw Error(Errc::MalformedStream, "timestamps out of order at " +
                                             std::to_string(e.timestamp));
    previous = e.timestamp;
  }
  return pair_press_release(stream);
}

inline std::size_t minimum_keys(FeatureKind kind) noexcept {
  return kind == FeatureKind::PR ? 1 : 2;
}

inline FeatureVector extract_features(std::span<const KeyStroke> keys, Field field,
                                      FeatureKind kind) {
  if (keys.size() < minimum_keys(kind))
    throw Error(Errc::TooFewKeys, std::string(to_string(kind)) + " needs at least " +
                                      std::to_string(minimum_keys(kind)) + " keys, got " +
                                      std::to_string(keys.size()));
  FeatureVector fv{kind, field, {}};
  if (kind == FeatureKind::PR) {
    fv.values.reserve(keys.size());
    for (const auto& k : keys) fv.values.push_back(k.release.timestamp - k.press.timestamp);
    return fv;
  }
  fv.values.reserve(keys.size() - 1);
  for (std::size_t i = 0; i + 1 < keys.size(); ++i) {
    const auto& cur = keys[i];
    const auto& next = keys[i + 1];
    switch (kind) {
      case FeatureKind::PP:
        fv.values.push_back(next.press.timestamp - cur.press.timestamp);
        break;
      case FeatureKind::RR:
        fv.values.push_back(next.release.timestamp - cur.release.timestamp);
        break;
      case FeatureKind::RP:
        fv.values.push_back(next.press.timestamp - cur.release.timestamp);
        break;
      case FeatureKind::PR:
        break;
    }
  }
  return fv;
}

/// Extracts one feature family from a filtered stream.
inline FeatureVector extract_features(const EventStream& stream, FeatureKind kind) {
  auto keys = pair_press_release(stream);
  return extract_features(keys, stream.field, kind);
}

}  // namespace keystroke
