#pragma once

// Slow, obviously-correct reference implementations the library is checked against.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <numeric>
#include <set>
#include <vector>

#include "prognos/datamodel.hpp"

namespace prognos::oracle {

/// All-pairs Harrell's C: comparable iff the shorter time is an event and times differ.
inline double c_index_pairs(const std::vector<double>& risk, const std::vector<SurvivalLabel>& y,
                            bool* any_pair = nullptr) {
  double num = 0.0;
  long den = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    for (std::size_t j = 0; j < y.size(); ++j) {
      if (!(y[i].time_months < y[j].time_months) || !y[i].event) continue;
      ++den;
      if (risk[i] > risk[j]) num += 1.0;
      else if (risk[i] == risk[j]) num += 0.5;
    }
  }
  if (any_pair) *any_pair = den > 0;
  return den ? num / double(den) : 0.0;
}

/// Product over distinct event times <= t of (1 - deaths / at_risk), counted directly.
inline double km_at(const std::vector<SurvivalLabel>& y, double t) {
  std::set<double> event_times;
  for (const auto& s : y)
    if (s.event && s.time_months <= t) event_times.insert(s.time_months);
  double surv = 1.0;
  for (double u : event_times) {
    int n = 0, d = 0;
    for (const auto& s : y) {
      n += s.time_months >= u;
      d += s.event && s.time_months == u;
    }
    surv *= 1.0 - double(d) / n;
  }
  return surv;
}

struct LogRankTable {
  double observed_a = 0.0;
  double expected_a = 0.0;
  double variance = 0.0;
  double chi2 = 0.0;
};

inline LogRankTable logrank_table(const std::vector<SurvivalLabel>& a, const std::vector<SurvivalLabel>& b) {
  std::set<double> times;
  for (const auto* g : {&a, &b})
    for (const auto& s : *g)
      if (s.event) times.insert(s.time_months);
  LogRankTable t;
  for (double u : times) {
    double na = 0, nb = 0, da = 0, db = 0;
    for (const auto& s : a) {
      na += s.time_months >= u;
      da += s.event && s.time_months == u;
    }
    for (const auto& s : b) {
      nb += s.time_months >= u;
      db += s.event && s.time_months == u;
    }
    const double n = na + nb, d = da + db;
    t.observed_a += da;
    t.expected_a += d * na / n;
    if (n > 1) t.variance += d * (n - d) * na * nb / (n * n * (n - 1));
  }
  if (t.variance > 0) t.chi2 = std::pow(t.observed_a - t.expected_a, 2) / t.variance;
  return t;
}

/// Regularized upper incomplete gamma Q(a, x): series for small x, Lentz continued fraction otherwise.
inline double gamma_q(double a, double x) {
  if (x <= 0.0) return 1.0;
  const double lg = std::lgamma(a);
  if (x < a + 1.0) {
    double ap = a, sum = 1.0 / a, del = sum;
    for (int n = 0; n < 10000; ++n) {
      ap += 1.0;
      del *= x / ap;
      sum += del;
      if (std::fabs(del) < std::fabs(sum) * 1e-16) break;
    }
    return 1.0 - sum * std::exp(-x + a * std::log(x) - lg);
  }
  const double tiny = 1e-300;
  double b = x + 1.0 - a, c = 1.0 / tiny, d = 1.0 / b, h = d;
  for (int i = 1; i < 10000; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::fabs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < 1e-16) break;
  }
  return std::exp(-x + a * std::log(x) - lg) * h;
}

inline double chi2_sf_1df(double x) { return gamma_q(0.5, x / 2.0); }

/// Set-builder threshold selection: {i : S_ij < tau for every j != i}.
template <class Matrix>
std::vector<std::size_t> literal_select(const Matrix& s, std::size_t n, double tau) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < n; ++i) {
    bool keep = true;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i && !(s(i, j) < tau)) keep = false;
    if (keep) out.push_back(i);
  }
  return out;
}

inline std::vector<std::size_t> intersect(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  std::vector<std::size_t> out;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

/// Density clustering from definitions: core points (>= min_pts neighbours
/// within eps, self included) joined by eps-adjacency into components;
/// components ordered by their smallest core index; a border point joins the
/// earliest component with a core neighbour. Returns sorted index sets.
inline std::vector<std::vector<std::size_t>> density_clusters(const std::vector<std::pair<double, double>>& p,
                                                             double eps, std::size_t min_pts) {
  const std::size_t n = p.size();
  auto near = [&](std::size_t i, std::size_t j) {
    return std::hypot(p[i].first - p[j].first, p[i].second - p[j].second) <= eps;
  };
  std::vector<bool> core(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t c = 0;
    for (std::size_t j = 0; j < n; ++j) c += near(i, j);
    core[i] = c >= min_pts;
  }
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (core[i] && core[j] && near(i, j)) parent[find(i)] = find(j);

  std::map<std::size_t, std::size_t> root_to_cluster;  // root -> position by smallest core index
  std::vector<std::vector<std::size_t>> clusters;
  for (std::size_t i = 0; i < n; ++i) {
    if (!core[i]) continue;
    auto [it, fresh] = root_to_cluster.emplace(find(i), clusters.size());
    if (fresh) clusters.emplace_back();
    clusters[it->second].push_back(i);
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (core[i]) continue;
    std::size_t best = clusters.size();
    for (std::size_t j = 0; j < n; ++j)
      if (core[j] && near(i, j)) best = std::min(best, root_to_cluster.at(find(j)));
    if (best < clusters.size()) clusters[best].push_back(i);
  }
  for (auto& c : clusters) std::sort(c.begin(), c.end());
  return clusters;
}

/// Nearest-rank percentile cut computed by sorting.
inline double rank_cut(std::vector<double> v, double pct) {
  std::sort(v.begin(), v.end());
  std::size_t r = static_cast<std::size_t>(std::floor(pct * double(v.size())));
  return v[std::min(r, v.size() - 1)];
}

}  // namespace prognos::oracle
