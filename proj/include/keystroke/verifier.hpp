#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "keystroke/error.hpp"
#include "keystroke/events.hpp"

namespace keystroke {

inline constexpr double kDefaultSigmaFloor = 1.0;  // ms

// Comparison score: 0 is a perfect match, 1 the worst possible one.
class Score {
 public:
  constexpr Score() = default;
  explicit Score(double value) : value_(value) {
    if (!(value >= 0.0 && value <= 1.0))
      throw Error(Errc::InvalidInput, "score outside [0, 1]: " + std::to_string(value));
  }

  constexpr double value() const noexcept { return value_; }
  static constexpr Score worst() noexcept { return Score(Worst{}); }

  friend constexpr auto operator<=>(const Score&, const Score&) = default;

 private:
  struct Worst {};
  constexpr explicit Score(Worst) noexcept : value_(1.0) {}
  double value_ = 0.0;
};

// Gaussian template (mean and deviation per component) of one feature part.
struct Template {
  FeatureKind kind = FeatureKind::PR;
  Field field = Field::Login;
  std::vector<double> mu;
  std::vector<double> sigma;
  std::size_t enroll_count = 0;

  std::size_t size() const noexcept { return mu.size(); }
  Part part() const noexcept { return {field, kind}; }

  friend bool operator==(const Template&, const Template&) = default;
};

/// Builds a template from N >= 2 enrollment vectors of one part.
///
/// sigma is the population deviation (divide by N), clamped below by
/// `sigma_floor` so that zero-variance components stay scorable.
inline Template build_template(std::span<const FeatureVector> vectors,
                               double sigma_floor = kDefaultSigmaFloor) {
  if (vectors.size() < 2)
    throw Error(Errc::InsufficientSamples,
                "need at least 2 enrollment vectors, got " + std::to_string(vectors.size()));
  const auto& first = vectors.front();
  const std::size_t n = first.size();
  for (const auto& v : vectors) {
    if (v.kind != first.kind || v.field != first.field)
      throw Error(Errc::KindMismatch, "enrollment vectors mix " + to_string(first.part()) +
                                          " and " + to_string(v.part()));
    if (v.size() != n)
      throw Error(Errc::DimensionMismatch, "enrollment vectors of size " + std::to_string(n) +
                                               " and " + std::to_string(v.size()));
  }

  Template t{first.kind, first.field, std::vector<double>(n, 0.0), std::vector<double>(n, 0.0),
             vectors.size()};
  const double count = static_cast<double>(vectors.size());
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0.0;
    for (const auto& v : vectors) sum += static_cast<double>(v.values[i]);
    const double mean = sum / count;
    double sq = 0.0;
    for (const auto& v : vectors) {
      const double d = static_cast<double>(v.values[i]) - mean;
      sq += d * d;
    }
    t.mu[i] = mean;
    t.sigma[i] = std::max(std::sqrt(sq / count), sigma_floor);
  }
  return t;
}

/// 1 - mean_i exp(-|x_i - mu_i| / sigma_i); a query whose size differs from
/// the template scores 1.
inline Score distance(const FeatureVector& x, const Template& t) {
  if (x.kind != t.kind || x.field != t.field)
    throw Error(Errc::KindMismatch,
                "query " + to_string(x.part()) + " against template " + to_string(t.part()));
  if (x.size() != t.size() || t.size() == 0) return Score::worst();
  double similarity = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i)
    similarity += std::exp(-std::abs(static_cast<double>(x.values[i]) - t.mu[i]) / t.sigma[i]);
  const double d = 1.0 - similarity / static_cast<double>(x.size());
  return Score(std::clamp(d, 0.0, 1.0));
}

/// Unweighted mean of the scores, no normalization.
inline Score fuse_scores(std::span<const Score> scores) {
  if (scores.empty()) throw Error(Errc::EmptyScoreList, "nothing to fuse");
  double sum = 0.0;
  for (auto s : scores) sum += s.value();
  return Score(std::clamp(sum / static_cast<double>(scores.size()), 0.0, 1.0));
}

using SampleParts = std::map<Part, FeatureVector>;
using Selection = std::set<Part>;

struct CompositeTemplate {
  std::string user;
  std::map<Part, Template> parts;
};

/// Every part that can be extracted from a pair of filtered streams. Parts
/// that need more keys than the stream holds are left out.
inline SampleParts extract_parts(const EventStream& login, const EventStream& password) {
  SampleParts out;
  for (const EventStream* s : {&login, &password}) {
    auto keys = pair_press_release(*s);
    for (auto kind : kAllKinds) {
      if (keys.size() < minimum_keys(kind)) continue;
      auto fv = extract_features(keys, s->field, kind);
      out.emplace(fv.part(), std::move(fv));
    }
  }
  return out;
}

/// Fused distance over the selected parts, visited in canonical order.
/// Parts missing from the sample score 1.
inline Score composite_score(const SampleParts& sample, const CompositeTemplate& tmpl,
                             const Selection& selection) {
  if (selection.empty()) throw Error(Errc::EmptySelection, "no feature parts selected");
  std::vector<Score> scores;
  scores.reserve(selection.size());
  for (const auto& part : selection) {
    auto t = tmpl.parts.find(part);
    if (t == tmpl.parts.end())
      throw Error(Errc::MissingTemplatePart,
                  "template of " + tmpl.user + " has no " + to_string(part) + " part");
    auto x = sample.find(part);
    scores.push_back(x == sample.end() ? Score::worst() : distance(x->second, t->second));
  }
  return fuse_scores(scores);
}

inline Selection make_selection(std::span<const FeatureKind> kinds, std::span<const Field> fields) {
  Selection s;
  for (auto f : fields)
    for (auto k : kinds) s.insert(Part{f, k});
  return s;
}

}  // namespace keystroke
