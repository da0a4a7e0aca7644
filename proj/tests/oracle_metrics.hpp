#ifndef MMREC_ORACLE_METRICS_HPP
#define MMREC_ORACLE_METRICS_HPP

// Naive reference metrics: direct transcriptions of the evaluation formulas,
// loop-by-loop, with no shared state or incremental tricks. These are the
// independent side of the metric-equivalence checks; keep them dumb.

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

namespace mmrec::oracle {

inline bool contains(const std::vector<int>& rel, int item) {
  return std::find(rel.begin(), rel.end(), item) != rel.end();
}

inline double dcg(const std::vector<int>& recs, const std::vector<int>& rel, int k) {
  double s = 0;
  for (int j = 1; j <= k && j <= static_cast<int>(recs.size()); ++j)
    if (contains(rel, recs[static_cast<size_t>(j - 1)]))
      s += 1.0 / std::log2(static_cast<double>(j) + 1.0);
  return s;
}

inline double idcg(const std::vector<int>& rel, int k) {
  double s = 0;
  int limit = std::min<int>(k, static_cast<int>(rel.size()));
  for (int j = 1; j <= limit; ++j) s += 1.0 / std::log2(static_cast<double>(j) + 1.0);
  return s;
}

inline double ndcg(const std::vector<int>& recs, const std::vector<int>& rel, int k) {
  return dcg(recs, rel, k) / idcg(rel, k);
}

inline int hits_at(const std::vector<int>& recs, const std::vector<int>& rel, int j) {
  int h = 0;
  for (int t = 1; t <= j && t <= static_cast<int>(recs.size()); ++t)
    if (contains(rel, recs[static_cast<size_t>(t - 1)])) ++h;
  return h;
}

inline double recall(const std::vector<int>& recs, const std::vector<int>& rel, int k) {
  return static_cast<double>(hits_at(recs, rel, k)) / static_cast<double>(rel.size());
}

inline double precision(const std::vector<int>& recs, const std::vector<int>& rel, int k) {
  return static_cast<double>(hits_at(recs, rel, k)) / static_cast<double>(k);
}

inline double f1(const std::vector<int>& recs, const std::vector<int>& rel, int k) {
  double p = precision(recs, rel, k), r = recall(recs, rel, k);
  if (p + r == 0) return 0;
  return 2.0 * p * r / (p + r);
}

inline double average_precision(const std::vector<int>& recs, const std::vector<int>& rel, int k) {
  double s = 0;
  for (int j = 1; j <= k && j <= static_cast<int>(recs.size()); ++j)
    if (contains(rel, recs[static_cast<size_t>(j - 1)]))
      s += static_cast<double>(hits_at(recs, rel, j)) / static_cast<double>(j);
  return s / static_cast<double>(rel.size());
}

inline double reciprocal_rank(const std::vector<int>& recs, const std::vector<int>& rel, int k) {
  for (int j = 1; j <= k && j <= static_cast<int>(recs.size()); ++j)
    if (contains(rel, recs[static_cast<size_t>(j - 1)])) return 1.0 / static_cast<double>(j);
  return 0.0;
}

inline double coverage(const std::vector<std::vector<int>>& recs_per_user, int n_items) {
  std::set<int> seen;
  for (const auto& r : recs_per_user) seen.insert(r.begin(), r.end());
  return static_cast<double>(seen.size()) / static_cast<double>(n_items);
}

inline double arp(const std::vector<int>& recs, const std::vector<double>& phi) {
  double s = 0;
  for (int i : recs) s += phi[static_cast<size_t>(i)];
  return s / static_cast<double>(recs.size());
}

inline std::vector<int> long_tail(const std::vector<double>& phi, double fraction) {
  std::vector<int> order(phi.size());
  for (size_t i = 0; i < phi.size(); ++i) order[i] = static_cast<int>(i);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (phi[static_cast<size_t>(a)] != phi[static_cast<size_t>(b)])
      return phi[static_cast<size_t>(a)] < phi[static_cast<size_t>(b)];
    return a < b;
  });
  size_t take = static_cast<size_t>(std::ceil(fraction * static_cast<double>(phi.size())));
  order.resize(std::min(take, order.size()));
  return order;
}

inline double aplt(const std::vector<int>& recs, const std::vector<double>& phi, double fraction) {
  std::vector<int> tail = long_tail(phi, fraction);
  double s = 0;
  for (int i : recs)
    if (std::find(tail.begin(), tail.end(), i) != tail.end()) s += 1.0;
  return s / static_cast<double>(recs.size());
}

// Popularity lift of the recommendations over the user's train history; the
// caller excludes users whose history popularity is zero.
inline double popularity_lift(const std::vector<int>& recs, const std::vector<int>& history,
                              const std::vector<double>& phi) {
  double pb_q = arp(recs, phi);
  double pb_p = arp(history, phi);
  return (pb_q - pb_p) / pb_p;
}

// Student-t two-sided tail probability by Simpson integration of the density.
inline double student_t_two_sided(double t, double df) {
  double abs_t = std::abs(t);
  auto pdf = [df](double x) {
    double c = std::exp(std::lgamma((df + 1) / 2) - std::lgamma(df / 2)) /
               std::sqrt(df * 3.14159265358979323846);
    return c * std::pow(1.0 + x * x / df, -(df + 1) / 2);
  };
  // integrate pdf over [abs_t, abs_t + 60] (tail beyond is negligible here)
  const int steps = 20000;
  double a = abs_t, b = abs_t + 60.0, h = (b - a) / steps;
  double s = pdf(a) + pdf(b);
  for (int i = 1; i < steps; ++i) s += pdf(a + i * h) * (i % 2 ? 4.0 : 2.0);
  return 2.0 * s * h / 3.0;
}

}  // namespace mmrec::oracle

#endif
