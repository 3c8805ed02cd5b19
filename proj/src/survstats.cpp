#include "prognos/survstats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "prognos/error.hpp"

namespace prognos::stats {

namespace {

// Fenwick tree over risk ranks.
class Fenwick {
 public:
  explicit Fenwick(std::size_t n) : t_(n + 1, 0) {}
  void add(std::size_t i) {
    for (++i; i < t_.size(); i += i & (~i + 1)) ++t_[i];
  }
  // count of inserted ranks < i
  std::int64_t prefix(std::size_t i) const {
    std::int64_t s = 0;
    for (; i > 0; i -= i & (~i + 1)) s += t_[i];
    return s;
  }

 private:
  std::vector<std::int64_t> t_;
};

std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t n) {
  // Largest multiple of n representable; draws above it are rejected.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % n;
}

}  // namespace

double c_index(std::span<const double> risks, std::span<const SurvivalLabel> labels) {
  if (risks.size() != labels.size()) {
    throw Error(ErrorCode::InvalidArgument, "risks and labels differ in length");
  }
  const std::size_t n = risks.size();

  // Dense ranks of the risk values.
  std::vector<double> sorted(risks.begin(), risks.end());
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  std::vector<std::size_t> rank(n);
  for (std::size_t i = 0; i < n; ++i) {
    rank[i] = static_cast<std::size_t>(std::lower_bound(sorted.begin(), sorted.end(), risks[i]) -
                                       sorted.begin());
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return labels[a].time_months > labels[b].time_months;
  });

  // Walk times from longest to shortest; the tree holds everyone with a
  // strictly longer time than the current group.
  Fenwick tree(sorted.size());
  std::int64_t inserted = 0;
  double concordant = 0.0;
  std::int64_t comparable = 0;
  for (std::size_t g = 0; g < n;) {
    std::size_t end = g;
    while (end < n && labels[order[end]].time_months == labels[order[g]].time_months) ++end;
    for (std::size_t k = g; k < end; ++k) {
      const std::size_t i = order[k];
      if (!labels[i].event) continue;
      const auto below = tree.prefix(rank[i]);
      const auto tied = tree.prefix(rank[i] + 1) - below;
      concordant += static_cast<double>(below) + 0.5 * static_cast<double>(tied);
      comparable += inserted;
    }
    for (std::size_t k = g; k < end; ++k) {
      tree.add(rank[order[k]]);
      ++inserted;
    }
    g = end;
  }
  if (comparable == 0) throw Error(ErrorCode::NoComparablePairs, "no comparable pairs");
  return concordant / static_cast<double>(comparable);
}

double KmCurve::at(double t) const {
  double s = 1.0;
  for (std::size_t i = 0; i < times.size() && times[i] <= t; ++i) s = survival[i];
  return s;
}

KmCurve km_curve(std::span<const SurvivalLabel> labels) {
  if (labels.empty()) throw Error(ErrorCode::InvalidArgument, "km_curve needs at least one subject");
  std::vector<SurvivalLabel> sorted(labels.begin(), labels.end());
  std::sort(sorted.begin(), sorted.end(),
            [](const SurvivalLabel& a, const SurvivalLabel& b) { return a.time_months < b.time_months; });
  KmCurve km;
  int at_risk = static_cast<int>(sorted.size());
  double s = 1.0;
  for (std::size_t g = 0; g < sorted.size();) {
    std::size_t end = g;
    int deaths = 0;
    while (end < sorted.size() && sorted[end].time_months == sorted[g].time_months) {
      deaths += sorted[end].event ? 1 : 0;
      ++end;
    }
    const int leaving = static_cast<int>(end - g);
    if (deaths > 0) s *= 1.0 - static_cast<double>(deaths) / static_cast<double>(at_risk);
    km.times.push_back(sorted[g].time_months);
    km.survival.push_back(s);
    km.at_risk.push_back(at_risk);
    km.deaths.push_back(deaths);
    km.censored.push_back(leaving - deaths);
    at_risk -= leaving;
    g = end;
  }
  return km;
}

LogRankResult logrank(std::span<const SurvivalLabel> a, std::span<const SurvivalLabel> b) {
  if (a.empty() || b.empty()) throw Error(ErrorCode::InvalidArgument, "log-rank needs two non-empty groups");
  std::vector<double> event_times;
  for (auto grp : {a, b}) {
    for (const auto& l : grp) {
      if (l.event) event_times.push_back(l.time_months);
    }
  }
  if (event_times.empty()) throw Error(ErrorCode::NoEvents, "no events in either group");
  std::sort(event_times.begin(), event_times.end());
  event_times.erase(std::unique(event_times.begin(), event_times.end()), event_times.end());

  auto tally = [](std::span<const SurvivalLabel> g, double t, int& at_risk, int& deaths) {
    at_risk = 0;
    deaths = 0;
    for (const auto& l : g) {
      if (l.time_months >= t) ++at_risk;
      if (l.event && l.time_months == t) ++deaths;
    }
  };

  LogRankResult r;
  for (double t : event_times) {
    int na, da, nb, db;
    tally(a, t, na, da);
    tally(b, t, nb, db);
    const double n = na + nb;
    const double d = da + db;
    r.observed_a += da;
    r.expected_a += d * na / n;
    if (n > 1) r.variance += d * (n - d) * na * nb / (n * n * (n - 1));
  }
  if (r.variance <= 0.0) {
    r.chi2 = 0.0;
    r.p = 1.0;
    return r;
  }
  const double diff = r.observed_a - r.expected_a;
  r.chi2 = diff * diff / r.variance;
  r.p = chi2_sf_1df(r.chi2);
  return r;
}

double chi2_sf_1df(double x) {
  if (!(x >= 0.0)) throw Error(ErrorCode::InvalidArgument, "chi-square statistic must be >= 0");
  return std::erfc(std::sqrt(x / 2.0));
}

MedianSplit median_split(std::span<const double> risks) {
  if (risks.size() < 2) throw Error(ErrorCode::InvalidArgument, "median split needs two subjects");
  std::vector<double> s(risks.begin(), risks.end());
  std::sort(s.begin(), s.end());
  const std::size_t n = s.size();
  MedianSplit out;
  out.threshold = n % 2 ? s[n / 2] : (s[n / 2 - 1] + s[n / 2]) / 2.0;
  for (std::size_t i = 0; i < n; ++i) (risks[i] > out.threshold ? out.high : out.low).push_back(i);
  if (out.high.empty() || out.low.empty()) {
    throw Error(ErrorCode::DegenerateSplit, "all risks fall on one side of the median");
  }
  return out;
}

std::vector<std::vector<std::string>> kfold(const std::vector<std::string>& ids, std::size_t k,
                                            std::uint64_t seed) {
  if (k < 2) throw Error(ErrorCode::InvalidArgument, "k must be at least 2");
  if (ids.size() < k) {
    throw Error(ErrorCode::TooFewCases, fmt::format("{} cases for {} folds", ids.size(), k));
  }
  std::vector<std::string> shuffled = ids;
  std::mt19937_64 rng(seed);
  for (std::size_t i = shuffled.size() - 1; i > 0; --i) {
    std::swap(shuffled[i], shuffled[bounded(rng, i + 1)]);
  }
  std::vector<std::vector<std::string>> folds(k);
  for (std::size_t i = 0; i < shuffled.size(); ++i) folds[i % k].push_back(shuffled[i]);
  return folds;
}

MeanStd mean_std(std::span<const double> values) {
  if (values.empty()) throw Error(ErrorCode::InvalidArgument, "mean of no values");
  MeanStd m;
  for (double v : values) m.mean += v;
  m.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - m.mean) * (v - m.mean);
    m.sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return m;
}

std::string format_mean_std(const MeanStd& m, int decimals) {
  return fmt::format("{:.{}f}±{:.{}f}", m.mean, decimals, m.sd, decimals);
}

}  // namespace prognos::stats
