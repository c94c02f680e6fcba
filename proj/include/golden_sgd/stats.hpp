#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "golden_sgd/errors.hpp"

namespace golden_sgd {

struct SampleSummary {
  std::vector<double> values;        // as given
  std::vector<std::size_t> ranking;  // indices into values, best (largest) first
  std::size_t k = 0;
  double mean = 0.0;
  double stddev = 0.0;  // population standard deviation of the k best

  std::vector<double> top_values() const {
    std::vector<double> out;
    for (std::size_t r = 0; r < k; ++r) out.push_back(values[ranking[r]]);
    return out;
  }
};

// Mean and population std of the k largest values. Ties keep input order.
inline SampleSummary top_k_mean(std::span<const double> values, std::size_t k = 10) {
  if (k == 0 || values.size() < k) {
    throw InsufficientDataError("top_k_mean needs at least " + std::to_string(k) + " values, got " +
                                std::to_string(values.size()));
  }
  SampleSummary out;
  out.values.assign(values.begin(), values.end());
  out.ranking.resize(values.size());
  std::iota(out.ranking.begin(), out.ranking.end(), std::size_t{0});
  std::stable_sort(out.ranking.begin(), out.ranking.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
  out.k = k;
  // Shifted by the best value so equal inputs give an exact mean and zero std.
  const double shift = values[out.ranking[0]];
  double sum = 0.0;
  for (std::size_t r = 0; r < k; ++r) sum += values[out.ranking[r]] - shift;
  out.mean = shift + sum / static_cast<double>(k);
  double ss = 0.0;
  for (std::size_t r = 0; r < k; ++r) {
    const double d = values[out.ranking[r]] - out.mean;
    ss += d * d;
  }
  out.stddev = std::sqrt(ss / static_cast<double>(k));
  return out;
}

// ------------------------------------------------------- Wilcoxon signed-rank

struct SignedRanks {
  std::vector<double> differences;  // nonzero x - y
  std::vector<double> ranks;        // average ranks of |difference|, 1-based
  std::vector<std::size_t> tie_sizes;
};

inline SignedRanks signed_ranks(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ShapeError("wilcoxon samples must be paired (equal length)");
  if (x.empty()) throw InsufficientDataError("wilcoxon needs at least one pair");
  SignedRanks sr;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - y[i];
    if (d != 0.0) sr.differences.push_back(d);
  }
  if (sr.differences.empty()) throw UndefinedTestError("wilcoxon test undefined: all differences are zero");
  const std::size_t m = sr.differences.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(sr.differences[a]) < std::abs(sr.differences[b]);
  });
  sr.ranks.assign(m, 0.0);
  for (std::size_t start = 0; start < m;) {
    std::size_t end = start + 1;
    while (end < m && std::abs(sr.differences[order[end]]) == std::abs(sr.differences[order[start]])) ++end;
    // positions start+1 .. end share the average rank
    const double avg = 0.5 * static_cast<double>(start + 1 + end);
    for (std::size_t j = start; j < end; ++j) sr.ranks[order[j]] = avg;
    sr.tie_sizes.push_back(end - start);
    start = end;
  }
  return sr;
}

struct WilcoxonResult {
  double statistic;  // W+: sum of ranks of positive differences
  double p_value;
  std::size_t nonzero;
  bool exact;
};

inline constexpr std::size_t kWilcoxonExactLimit = 20;

// Classical Wilcoxon signed-rank test: zero differences dropped, average
// ranks on ties. Exact null distribution for up to 20 nonzero differences,
// tie-corrected normal approximation beyond. The one-sided alternative is
// "x tends to exceed y".
inline WilcoxonResult wilcoxon_signed_rank(std::span<const double> x, std::span<const double> y,
                                           bool two_sided = true) {
  const SignedRanks sr = signed_ranks(x, y);
  const std::size_t m = sr.differences.size();
  double w = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    if (sr.differences[i] > 0.0) w += sr.ranks[i];
  }
  WilcoxonResult out{w, 1.0, m, m <= kWilcoxonExactLimit};

  if (out.exact) {
    // Doubled average ranks are integers; count sign assignments by their
    // doubled W+ with a subset-sum recurrence.
    std::vector<std::uint64_t> doubled(m);
    std::uint64_t total = 0;
    for (std::size_t i = 0; i < m; ++i) {
      doubled[i] = static_cast<std::uint64_t>(std::llround(2.0 * sr.ranks[i]));
      total += doubled[i];
    }
    std::vector<std::uint64_t> counts(total + 1, 0);
    counts[0] = 1;
    std::uint64_t reach = 0;
    for (std::uint64_t r : doubled) {
      reach += r;
      for (std::uint64_t s = reach; s >= r; --s) {
        counts[s] += counts[s - r];
        if (s == r) break;
      }
    }
    const auto w2 = static_cast<std::uint64_t>(std::llround(2.0 * w));
    std::uint64_t upper = 0, lower = 0;
    for (std::uint64_t s = 0; s <= total; ++s) {
      if (s >= w2) upper += counts[s];
      if (s <= w2) lower += counts[s];
    }
    const double denom = std::ldexp(1.0, static_cast<int>(m));
    const double p_upper = static_cast<double>(upper) / denom;
    const double p_lower = static_cast<double>(lower) / denom;
    out.p_value = two_sided ? std::min(1.0, 2.0 * std::min(p_upper, p_lower)) : p_upper;
    return out;
  }

  const double md = static_cast<double>(m);
  const double mean = md * (md + 1.0) / 4.0;
  double var = md * (md + 1.0) * (2.0 * md + 1.0) / 24.0;
  for (std::size_t t : sr.tie_sizes) {
    const double td = static_cast<double>(t);
    var -= (td * td * td - td) / 48.0;
  }
  const double z = (w - mean) / std::sqrt(var);
  out.p_value = two_sided ? std::erfc(std::abs(z) / std::sqrt(2.0)) : 0.5 * std::erfc(z / std::sqrt(2.0));
  return out;
}

}  // namespace golden_sgd
