#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "keystroke/dataset.hpp"
#include "keystroke/error.hpp"

namespace keystroke::synthetic {

// Population generator used in place of a real capture campaign.
struct SyntheticSpec {
  std::size_t users = 48;
  int sessions = 5;
  std::size_t per_step = 10;            // imposed and chosen inputs per session
  std::size_t impostor_per_target = 5;  // inputs per impostor target per session
  std::size_t login_keys = 8;
  std::size_t password_keys = 8;
  std::size_t password_keys_max = 0;  // > password_keys draws lengths uniformly
  double separation = 3.0;            // distance between user means, in noise sigmas
  std::uint64_t seed = 1;

  double hold_sigma = 12.0;  // ms
  double gap_sigma = 25.0;   // ms
  // Per-user noise multiplier exp(heterogeneity * z), z ~ N(0, 1).
  double noise_heterogeneity = 0.0;
  // Optional extra per-user noise multiplier.
  std::function<double(std::size_t user_index, std::string_view chosen_password)> noise_scale;
};

inline constexpr std::int64_t kSyntheticEpochMs = 1'700'000'000'000;

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                                 std::uint64_t c = 0) {
  return splitmix64(splitmix64(splitmix64(seed ^ splitmix64(a)) ^ b) ^ c);
}

// mt19937_64 output is fixed by the standard; the distributions on top are
// spelled out here so that files are identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  std::size_t index(std::size_t n) { return static_cast<std::size_t>(uniform() * n) % n; }

  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::mt19937_64 engine_;
};

inline std::string random_text(Rng& rng, std::size_t length, std::string_view alphabet) {
  std::string s;
  for (std::size_t i = 0; i < length; ++i) s.push_back(alphabet[rng.index(alphabet.size())]);
  return s;
}

inline std::int32_t keycode_for(char c) {
  if (c >= 'a' && c <= 'z') return c - 'a' + 'A';
  return static_cast<unsigned char>(c);
}

struct KeyRhythm {
  double hold_mu;
  double gap_mu;  // press-to-press gap before the next key
};

// Population-level rhythm of a text: every typist deviates from it.
inline std::vector<KeyRhythm> text_base(std::uint64_t seed, std::uint64_t text_id,
                                        std::size_t length) {
  Rng rng(derive_seed(seed, 0xBA5E, text_id));
  std::vector<KeyRhythm> out(length);
  for (auto& k : out) k = {rng.uniform(80.0, 130.0), rng.uniform(140.0, 260.0)};
  return out;
}

inline std::vector<KeyRhythm> typist_rhythm(const SyntheticSpec& spec, std::size_t typist,
                                            std::uint64_t text_id,
                                            const std::vector<KeyRhythm>& base) {
  Rng rng(derive_seed(spec.seed, 0x57E1E, typist, text_id));
  std::vector<KeyRhythm> out(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    out[i].hold_mu = std::max(5.0, base[i].hold_mu + spec.separation * spec.hold_sigma * rng.normal());
    out[i].gap_mu = std::max(5.0, base[i].gap_mu + spec.separation * spec.gap_sigma * rng.normal());
  }
  return out;
}

inline EventStream type_text(std::string_view text, const std::vector<KeyRhythm>& rhythm,
                             double noise, const SyntheticSpec& spec, Rng& rng, Field field) {
  struct Stroke {
    std::int32_t code;
    Millis press;
    Millis release;
  };
  std::vector<Stroke> strokes;
  Millis press = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const auto code = keycode_for(text[i]);
    if (i > 0) {
      const auto gap = std::llround(rhythm[i - 1].gap_mu + noise * spec.gap_sigma * rng.normal());
      press += std::max<Millis>(1, gap);
    }
    // A key cannot go down again before it came up.
    for (const auto& s : strokes)
      if (s.code == code && s.release >= press) press = s.release + 1;
    const auto hold = std::max<Millis>(
        1, std::llround(rhythm[i].hold_mu + noise * spec.hold_sigma * rng.normal()));
    strokes.push_back({code, press, press + hold});
  }

  struct Ordered {
    KeyEvent event;
    std::size_t order;
  };
  std::vector<Ordered> events;
  for (std::size_t i = 0; i < strokes.size(); ++i) {
    events.push_back({{strokes[i].code, EventKind::Press, strokes[i].press}, 2 * i});
    events.push_back({{strokes[i].code, EventKind::Release, strokes[i].release}, 2 * i + 1});
  }
  std::sort(events.begin(), events.end(), [](const Ordered& a, const Ordered& b) {
    if (a.event.timestamp != b.event.timestamp) return a.event.timestamp < b.event.timestamp;
    return a.order < b.order;
  });
  EventStream s{field, {}};
  for (const auto& e : events) s.events.push_back(e.event);
  return rebase(std::move(s));
}

}  // namespace detail

inline void validate(const SyntheticSpec& spec) {
  auto fail = [](const std::string& what) { throw Error(Errc::InvalidInput, what); };
  if (spec.users < 2) fail("synthetic population needs at least 2 users");
  if (spec.sessions < 4) fail("synthetic population needs at least 4 sessions");
  if (spec.per_step < 1) fail("per_step must be >= 1");
  if (spec.login_keys < 2 || spec.password_keys < 2) fail("texts need at least 2 keys");
  if (spec.password_keys_max != 0 && spec.password_keys_max < spec.password_keys)
    fail("password_keys_max below password_keys");
  if (!(spec.separation >= 0.0)) fail("separation must be >= 0");
  if (!(spec.hold_sigma > 0.0) || !(spec.gap_sigma > 0.0)) fail("noise sigmas must be > 0");
}

inline std::string user_id(std::size_t index) {
  std::string digits = std::to_string(index + 1);
  return "u" + std::string(digits.size() < 3 ? 3 - digits.size() : 0, '0') + digits;
}

/// Deterministic synthetic population: each session holds per_step imposed
/// inputs, per_step chosen inputs and impostor_per_target inputs on each of
/// two other users' chosen pairs.
inline DatasetHandle generate(const SyntheticSpec& spec) {
  validate(spec);
  using detail::Rng;
  constexpr std::string_view kLetters = "abcdefghijklmnopqrstuvwxyz";
  constexpr std::string_view kPasswordChars = "abcdefghijklmnopqrstuvwxyz0123456789";

  Rng text_rng(detail::derive_seed(spec.seed, 0x7E47));
  const std::string imposed_login = detail::random_text(text_rng, spec.login_keys, kLetters);
  const std::string imposed_password =
      detail::random_text(text_rng, spec.password_keys, kPasswordChars);

  struct Owner {
    std::string id, login, password;
    double noise = 1.0;
  };
  std::vector<Owner> owners(spec.users);
  std::set<std::string> taken{imposed_login + "\n" + imposed_password};
  for (std::size_t u = 0; u < spec.users; ++u) {
    auto& o = owners[u];
    o.id = user_id(u);
    do {
      const auto pw_len = spec.password_keys_max > spec.password_keys
                              ? spec.password_keys +
                                    text_rng.index(spec.password_keys_max - spec.password_keys + 1)
                              : spec.password_keys;
      o.login = detail::random_text(text_rng, spec.login_keys, kLetters);
      o.password = detail::random_text(text_rng, pw_len, kPasswordChars);
    } while (!taken.insert(o.login + "\n" + o.password).second);
    Rng noise_rng(detail::derive_seed(spec.seed, 0x4015E, u));
    o.noise = std::exp(spec.noise_heterogeneity * noise_rng.normal());
    if (spec.noise_scale) o.noise *= spec.noise_scale(u, o.password);
  }

  // Text ids: 0/1 imposed login/password, 2(u+1)/2(u+1)+1 user u's chosen pair.
  auto login_text_id = [](std::size_t owner) { return 2 * (owner + 1); };

  std::vector<SampleRecord> records;
  for (std::size_t u = 0; u < spec.users; ++u) {
    const auto& me = owners[u];
    Rng rng(detail::derive_seed(spec.seed, 0x5A3D1E, u));
    std::int64_t clock = 0;

    auto make = [&](Step step, const std::string& login, const std::string& password,
                    std::uint64_t login_id, int session) {
      const auto lb = detail::text_base(spec.seed, login_id, login.size());
      const auto pb = detail::text_base(spec.seed, login_id + 1, password.size());
      const auto lr = detail::typist_rhythm(spec, u, login_id, lb);
      const auto pr = detail::typist_rhythm(spec, u, login_id + 1, pb);
      SampleRecord r;
      r.user = me.id;
      r.session = session;
      r.step = std::move(step);
      r.target_login = login;
      r.target_password = password;
      r.env = {{"source", "synthetic"}, {"seed", std::to_string(spec.seed)}};
      r.captured_at = kSyntheticEpochMs + session * 7LL * 86'400'000LL + (clock++) * 20'000LL;
      r.login_events = detail::type_text(login, lr, me.noise, spec, rng, Field::Login);
      r.password_events = detail::type_text(password, pr, me.noise, spec, rng, Field::Password);
      records.push_back(std::move(r));
    };

    const std::size_t others = spec.users - 1;
    for (int s = 1; s <= spec.sessions; ++s) {
      for (std::size_t i = 0; i < spec.per_step; ++i)
        make(Step::imposed(), imposed_login, imposed_password, 0, s);
      for (std::size_t i = 0; i < spec.per_step; ++i)
        make(Step::chosen(), me.login, me.password, login_text_id(u), s);
      // Rotating offsets spread impostor attempts evenly over the others.
      const std::size_t targets = std::min<std::size_t>(2, others);
      for (std::size_t k = 0; k < targets; ++k) {
        const std::size_t offset = 1 + (2 * static_cast<std::size_t>(s - 1) + k) % others;
        const std::size_t t = (u + offset) % spec.users;
        for (std::size_t i = 0; i < spec.impostor_per_target; ++i)
          make(Step::impostor_of_user(owners[t].id), owners[t].login, owners[t].password,
               login_text_id(t), s);
      }
    }
  }
  return DatasetHandle(std::move(records));
}

}  // namespace keystroke::synthetic
