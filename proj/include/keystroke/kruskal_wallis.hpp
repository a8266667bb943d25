#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "keystroke/error.hpp"

namespace keystroke::stats {

namespace detail {

// Regularized lower incomplete gamma P(a, x) by its power series; converges
// quickly for x < a + 1.
inline double gamma_p_series(double a, double x) {
  double term = 1.0 / a;
  double sum = term;
  for (int n = 1; n < 10000; ++n) {
    term *= x / (a + n);
    sum += term;
    if (std::abs(term) < std::abs(sum) * 1e-16) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Regularized upper incomplete gamma Q(a, x) by Lentz's continued fraction;
// used for x >= a + 1.
inline double gamma_q_fraction(double a, double x) {
  constexpr double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < 10000; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < 1e-16) break;
  }
  return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

}  // namespace detail

/// Q(a, x) = 1 - P(a, x), the regularized upper incomplete gamma function.
inline double gamma_q(double a, double x) {
  if (a <= 0.0) throw Error(Errc::InvalidInput, "gamma_q needs a > 0");
  if (x <= 0.0) return 1.0;
  if (x < a + 1.0) return std::clamp(1.0 - detail::gamma_p_series(a, x), 0.0, 1.0);
  return std::clamp(detail::gamma_q_fraction(a, x), 0.0, 1.0);
}

/// Upper tail P(X >= x) of a chi-square variable with `dof` degrees of freedom.
inline double chi_square_upper_tail(double x, int dof) {
  if (dof < 1) throw Error(Errc::InvalidInput, "chi-square needs dof >= 1");
  return gamma_q(0.5 * dof, 0.5 * x);
}

/// Midranks (1-based) of the values; ties share the average of their ranks.
inline std::vector<double> midranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

enum class Decision { AcceptH0, RejectH0 };
enum class PValueMethod { ExactPermutation, ChiSquare, Degenerate };

inline constexpr double kSignificance = 0.05;

inline Decision decide(double p_value) noexcept {
  return p_value >= kSignificance ? Decision::AcceptH0 : Decision::RejectH0;
}

struct KWResult {
  double h = 0.0;
  int dof = 0;
  double p_value = 1.0;
  // Chi-square approximation, reported whatever method produced p_value.
  double p_chi_square = 1.0;
  Decision decision = Decision::AcceptH0;
  PValueMethod method = PValueMethod::ChiSquare;
};

struct KWOptions {
  // Exact permutation p-values are used while the number of distinct group
  // assignments N! / (n_1! ... n_K!) stays below this bound.
  double exact_limit = 5e6;
};

namespace detail {

inline double multinomial_count(std::span<const std::size_t> sizes) {
  double log_count = std::lgamma(static_cast<double>(
                         std::accumulate(sizes.begin(), sizes.end(), std::size_t{0})) +
                     1.0);
  for (auto n : sizes) log_count -= std::lgamma(static_cast<double>(n) + 1.0);
  return std::exp(log_count);
}

// Walks every assignment of ranks to groups (each group a combination of the
// still-unassigned ranks, in group order) and counts the ones whose
// sum(R_i^2 / n_i) reaches the observed value.
class ExactEnumerator {
 public:
  ExactEnumerator(std::span<const double> ranks, std::span<const std::size_t> sizes,
                  double observed)
      : ranks_(ranks.begin(), ranks.end()),
        sizes_(sizes.begin(), sizes.end()),
        used_(ranks.size(), false),
        observed_(observed),
        tolerance_(1e-9 * std::max(1.0, std::abs(observed))) {}

  double p_value() {
    group(0, 0.0);
    return static_cast<double>(hits_) / static_cast<double>(total_);
  }

 private:
  void group(std::size_t g, double partial) {
    if (g + 1 == sizes_.size()) {
      // The last group takes whatever is left.
      double sum = 0.0;
      for (std::size_t i = 0; i < ranks_.size(); ++i)
        if (!used_[i]) sum += ranks_[i];
      const double stat = partial + sum * sum / static_cast<double>(sizes_[g]);
      ++total_;
      if (stat >= observed_ - tolerance_) ++hits_;
      return;
    }
    choose(g, 0, sizes_[g], 0.0, partial);
  }

  void choose(std::size_t g, std::size_t start, std::size_t remaining, double sum,
              double partial) {
    if (remaining == 0) {
      group(g + 1, partial + sum * sum / static_cast<double>(sizes_[g]));
      return;
    }
    for (std::size_t i = start; i < ranks_.size(); ++i) {
      if (used_[i]) continue;
      used_[i] = true;
      choose(g, i + 1, remaining - 1, sum + ranks_[i], partial);
      used_[i] = false;
    }
  }

  std::vector<double> ranks_;
  std::vector<std::size_t> sizes_;
  std::vector<bool> used_;
  double observed_;
  double tolerance_;
  std::uint64_t hits_ = 0;
  std::uint64_t total_ = 0;
};

}  // namespace detail

/// Kruskal-Wallis H test on K independent groups.
///
/// H uses pooled midranks with the usual tie correction. The p-value is the
/// exact permutation probability P(H* >= H) over all group assignments when
/// that enumeration is small enough, otherwise the chi-square(K-1) upper
/// tail. If every pooled value is identical the statistic is undefined and
/// the result is AcceptH0 with p = 1.
inline KWResult kruskal_wallis(std::span<const std::vector<double>> groups,
                               const KWOptions& options = {}) {
  if (groups.size() < 2) throw Error(Errc::InvalidInput, "Kruskal-Wallis needs K >= 2 groups");
  std::vector<double> pooled;
  std::vector<std::size_t> sizes;
  for (const auto& g : groups) {
    if (g.empty()) throw Error(Errc::InvalidInput, "Kruskal-Wallis group is empty");
    pooled.insert(pooled.end(), g.begin(), g.end());
    sizes.push_back(g.size());
  }
  const double n = static_cast<double>(pooled.size());
  if (pooled.size() < 3) throw Error(Errc::InvalidInput, "Kruskal-Wallis needs N >= 3");

  KWResult r;
  r.dof = static_cast<int>(groups.size()) - 1;

  const auto ranks = midranks(pooled);

  std::vector<double> sorted = pooled;
  std::sort(sorted.begin(), sorted.end());
  double tie_sum = 0.0;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    const double t = static_cast<double>(j - i);
    tie_sum += t * t * t - t;
    i = j;
  }
  const double correction = 1.0 - tie_sum / (n * n * n - n);
  if (correction <= 0.0) {
    r.h = 0.0;
    r.p_value = r.p_chi_square = 1.0;
    r.decision = Decision::AcceptH0;
    r.method = PValueMethod::Degenerate;
    return r;
  }

  double stat = 0.0;
  std::size_t offset = 0;
  for (auto size : sizes) {
    double sum = 0.0;
    for (std::size_t i = 0; i < size; ++i) sum += ranks[offset + i];
    stat += sum * sum / static_cast<double>(size);
    offset += size;
  }
  const double h = (12.0 / (n * (n + 1.0)) * stat - 3.0 * (n + 1.0)) / correction;
  r.h = std::max(0.0, h);
  r.p_chi_square = chi_square_upper_tail(r.h, r.dof);

  if (detail::multinomial_count(sizes) <= options.exact_limit) {
    r.p_value = detail::ExactEnumerator(ranks, sizes, stat).p_value();
    r.method = PValueMethod::ExactPermutation;
  } else {
    r.p_value = r.p_chi_square;
    r.method = PValueMethod::ChiSquare;
  }
  r.decision = decide(r.p_value);
  return r;
}

}  // namespace keystroke::stats
