#pragma once

#include <algorithm>
#include <span>
#include <string>
#include <vector>

#include "keystroke/error.hpp"
#include "keystroke/verifier.hpp"

namespace keystroke {

struct ScoreSet {
  std::string unit;  // user id or "global"
  std::vector<Score> genuine;
  std::vector<Score> impostor;
};

struct EerPoint {
  double eer = 0.0;
  double threshold = 0.0;
};

// A sample is accepted when its score is <= the threshold.
//   FMR(t)  = |impostor <= t| / |impostor|
//   FNMR(t) = |genuine  >  t| / |genuine|
// Operating points are evaluated at every distinct score. The EER is read
// at the first point where FMR >= FNMR, interpolated linearly against the
// previous point when the difference changes sign strictly between them.
inline EerPoint compute_eer(std::span<const double> genuine, std::span<const double> impostor) {
  if (genuine.empty() || impostor.empty())
    throw Error(Errc::EmptyScores, "EER needs genuine and impostor scores");

  std::vector<double> gen(genuine.begin(), genuine.end());
  std::vector<double> imp(impostor.begin(), impostor.end());
  std::sort(gen.begin(), gen.end());
  std::sort(imp.begin(), imp.end());
  std::vector<double> thresholds;
  thresholds.reserve(gen.size() + imp.size());
  std::merge(gen.begin(), gen.end(), imp.begin(), imp.end(), std::back_inserter(thresholds));
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

  const double ng = static_cast<double>(gen.size());
  const double ni = static_cast<double>(imp.size());
  // Point "below every score": nothing accepted.
  double prev_fmr = 0.0, prev_fnmr = 1.0, prev_t = thresholds.front();
  std::size_t gi = 0, ii = 0;
  for (double t : thresholds) {
    while (gi < gen.size() && gen[gi] <= t) ++gi;
    while (ii < imp.size() && imp[ii] <= t) ++ii;
    const double fmr = static_cast<double>(ii) / ni;
    const double fnmr = static_cast<double>(gen.size() - gi) / ng;
    const double diff = fmr - fnmr;
    if (diff == 0.0) return {fmr, t};
    if (diff > 0.0) {
      const double prev_diff = prev_fmr - prev_fnmr;
      const double alpha = -prev_diff / (diff - prev_diff);
      return {prev_fmr + alpha * (fmr - prev_fmr), prev_t + alpha * (t - prev_t)};
    }
    prev_fmr = fmr;
    prev_fnmr = fnmr;
    prev_t = t;
  }
  // The last threshold accepts everything: FMR = 1, FNMR = 0, so the loop
  // always returns.
  return {prev_fmr, prev_t};
}

inline EerPoint compute_eer(const ScoreSet& scores) {
  auto values = [](const std::vector<Score>& s) {
    std::vector<double> v;
    v.reserve(s.size());
    for (auto x : s) v.push_back(x.value());
    return v;
  };
  const auto g = values(scores.genuine);
  const auto i = values(scores.impostor);
  return compute_eer(g, i);
}

}  // namespace keystroke
