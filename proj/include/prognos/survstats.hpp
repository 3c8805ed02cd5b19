#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "prognos/datamodel.hpp"

namespace prognos::stats {

/// Harrell's C. A pair is comparable when the shorter time is an observed
/// event and the times differ; equal times are never comparable. Risk ties
/// count one half. Throws NoComparablePairs. O(n log n).
double c_index(std::span<const double> risks, std::span<const SurvivalLabel> labels);

/// Product-limit estimate with one row per distinct time (event or censoring).
struct KmCurve {
  std::vector<double> times;
  std::vector<double> survival;  // S(t) just after each time
  std::vector<int> at_risk;      // n at risk just before each time
  std::vector<int> deaths;
  std::vector<int> censored;

  std::size_t size() const { return times.size(); }
  /// Step-function value at t (1 before the first row).
  double at(double t) const;
};

KmCurve km_curve(std::span<const SurvivalLabel> labels);

struct LogRankResult {
  double chi2 = 0.0;
  double p = 1.0;
  double observed_a = 0.0;
  double expected_a = 0.0;
  double variance = 0.0;
};

/// Two-group log-rank test with hypergeometric variance. Throws NoEvents.
LogRankResult logrank(std::span<const SurvivalLabel> a, std::span<const SurvivalLabel> b);

/// Upper tail of the chi-square distribution with one degree of freedom.
double chi2_sf_1df(double x);

struct MedianSplit {
  double threshold = 0.0;
  std::vector<std::size_t> high;  // risk > median
  std::vector<std::size_t> low;   // risk <= median
};

/// Throws DegenerateSplit when one side is empty.
MedianSplit median_split(std::span<const double> risks);

/// Seeded Fisher-Yates shuffle followed by round-robin assignment. The
/// shuffle draws from mt19937_64 with its own rejection sampling, so folds
/// are identical across standard libraries. Throws TooFewCases when n < k.
std::vector<std::vector<std::string>> kfold(const std::vector<std::string>& ids, std::size_t k,
                                            std::uint64_t seed);

struct MeanStd {
  double mean = 0.0;
  double sd = 0.0;  // sample standard deviation (n - 1); 0 for n = 1
};

MeanStd mean_std(std::span<const double> values);
/// "0.683±0.022".
std::string format_mean_std(const MeanStd& m, int decimals = 3);

}  // namespace prognos::stats
