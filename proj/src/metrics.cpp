#include "mmrec/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "mmrec/common.hpp"

namespace mmrec {

using nlohmann::json;
namespace fs = std::filesystem;

AccuracyValues accuracy_metrics(std::span<const int> recs, const std::vector<int>& relevant, int k) {
  if (relevant.empty()) throw ValidationError("accuracy_metrics: empty relevant set");
  {
    std::set<int> uniq(recs.begin(), recs.end());
    if (uniq.size() != recs.size()) throw ValidationError("accuracy_metrics: duplicate recommended items");
  }
  auto is_rel = [&](int item) { return std::binary_search(relevant.begin(), relevant.end(), item); };
  size_t kk = static_cast<size_t>(k);
  size_t len = std::min(recs.size(), kk);

  AccuracyValues v;
  double dcg = 0, ap_sum = 0;
  size_t hits = 0;
  size_t first_hit = 0;  // 1-based; 0 = none
  for (size_t j = 1; j <= len; ++j) {
    if (is_rel(recs[j - 1])) {
      ++hits;
      dcg += 1.0 / std::log2(static_cast<double>(j) + 1.0);
      ap_sum += static_cast<double>(hits) / static_cast<double>(j);
      if (first_hit == 0) first_hit = j;
    }
  }
  double idcg = 0;
  size_t ideal = std::min(kk, relevant.size());
  for (size_t j = 1; j <= ideal; ++j) idcg += 1.0 / std::log2(static_cast<double>(j) + 1.0);
  v.ndcg = idcg > 0 ? dcg / idcg : 0.0;
  v.recall = static_cast<double>(hits) / static_cast<double>(relevant.size());
  v.precision = static_cast<double>(hits) / static_cast<double>(kk);
  v.f1 = (v.precision + v.recall) > 0 ? 2.0 * v.precision * v.recall / (v.precision + v.recall) : 0.0;
  v.ap = ap_sum / static_cast<double>(relevant.size());
  v.rr = first_hit > 0 ? 1.0 / static_cast<double>(first_hit) : 0.0;
  return v;
}

std::vector<uint8_t> long_tail_mask(const std::vector<double>& popularity, double tail_fraction) {
  size_t n = popularity.size();
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (popularity[static_cast<size_t>(a)] != popularity[static_cast<size_t>(b)])
      return popularity[static_cast<size_t>(a)] < popularity[static_cast<size_t>(b)];
    return a < b;
  });
  size_t tail = static_cast<size_t>(std::ceil(tail_fraction * static_cast<double>(n)));
  std::vector<uint8_t> mask(n, 0);
  for (size_t r = 0; r < std::min(tail, n); ++r) mask[static_cast<size_t>(order[r])] = 1;
  return mask;
}

std::vector<int> topk_from_scores(std::span<const float> scores, std::span<const int> candidates,
                                  const std::vector<int>& exclude, int k) {
  std::vector<int> pool;
  pool.reserve(candidates.size());
  for (int c : candidates)
    if (!std::binary_search(exclude.begin(), exclude.end(), c)) pool.push_back(c);
  if (pool.size() < static_cast<size_t>(k))
    throw ValidationError("topk_from_scores: only " + std::to_string(pool.size()) +
                          " candidates for k=" + std::to_string(k));
  auto better = [&](int a, int b) {
    float sa = scores[static_cast<size_t>(a)], sb = scores[static_cast<size_t>(b)];
    if (sa != sb) return sa > sb;
    return a < b;
  };
  std::partial_sort(pool.begin(), pool.begin() + k, pool.end(), better);
  pool.resize(static_cast<size_t>(k));
  return pool;
}

BeyondUserValues beyond_accuracy_user(std::span<const int> recs, const std::vector<double>& popularity,
                                      const std::vector<uint8_t>& tail_mask,
                                      const std::vector<int>& train_history) {
  BeyondUserValues v;
  double arp = 0, aplt = 0;
  for (int item : recs) {
    arp += popularity[static_cast<size_t>(item)];
    aplt += tail_mask[static_cast<size_t>(item)] ? 1.0 : 0.0;
  }
  v.arp = arp / static_cast<double>(recs.size());
  v.aplt = aplt / static_cast<double>(recs.size());
  double pb_p = 0;
  for (int item : train_history) pb_p += popularity[static_cast<size_t>(item)];
  if (!train_history.empty()) pb_p /= static_cast<double>(train_history.size());
  if (pb_p > 0) {
    v.pl = (v.arp - pb_p) / pb_p;
    v.pl_defined = true;
  }
  return v;
}

double compensated_mean(std::span<const double> values) {
  double sum = 0, comp = 0;
  for (double v : values) {
    double y = v - comp;
    double t = sum + y;
    comp = (t - sum) - y;
    sum = t;
  }
  return values.empty() ? 0.0 : sum / static_cast<double>(values.size());
}

namespace {

double sample_std(std::span<const double> values, double mean) {
  if (values.size() < 2) return 0.0;
  double s = 0;
  for (double v : values) s += (v - mean) * (v - mean);
  return std::sqrt(s / static_cast<double>(values.size() - 1));
}

struct EvalPlan {
  std::vector<int> users;                       // evaluated users
  std::vector<std::vector<int>> relevant;       // per evaluated user, sorted
  std::vector<int> candidates;                  // candidate item set, sorted
};

EvalPlan make_eval_plan(const Dataset& data, const Split& split, const std::string& part) {
  if (part != "val" && part != "test") throw ValidationError("evaluation part must be 'val' or 'test'");
  const auto& pairs = part == "val" ? split.val : split.test;
  std::vector<std::vector<int>> rel(data.n_users);
  for (auto [u, i] : pairs) rel[static_cast<size_t>(u)].push_back(i);
  EvalPlan plan;
  for (size_t u = 0; u < data.n_users; ++u) {
    if (rel[u].empty()) continue;  // users with no relevant items are skipped
    std::sort(rel[u].begin(), rel[u].end());
    plan.users.push_back(static_cast<int>(u));
    plan.relevant.push_back(std::move(rel[u]));
  }
  if (split.scenario == Scenario::item_cold) {
    std::set<int> items;
    for (auto [u, i] : pairs) items.insert(i);
    plan.candidates.assign(items.begin(), items.end());
  } else {
    plan.candidates.resize(data.n_items);
    std::iota(plan.candidates.begin(), plan.candidates.end(), 0);
  }
  return plan;
}

}  // namespace

std::vector<int> resolve_subset(const RecModel& model, const std::vector<std::string>& names) {
  const std::vector<std::string>& trained = model.eval_modalities();
  std::vector<int> ids;
  for (const std::string& n : names) {
    auto it = std::find(trained.begin(), trained.end(), n);
    if (it == trained.end())
      throw ValidationError("modality '" + n + "' is not among the model's trained modalities");
    ids.push_back(static_cast<int>(it - trained.begin()));
  }
  return ids;
}

MetricReport eval_model(RecModel& model, const Dataset& data, const Split& split, const TrainView& tv,
                        const std::string& part, int k, const std::vector<int>& subset) {
  if (model.training()) throw ValidationError("eval_model requires a frozen model (eval mode)");
  for (int id : subset)
    if (id < 0 || static_cast<size_t>(id) >= model.eval_modalities().size())
      throw ValidationError("modality subset id out of range");
  EvalPlan plan = make_eval_plan(data, split, part);
  model.begin_scoring(subset);

  size_t nu = plan.users.size();
  MetricReport report;
  report.k = k;
  report.users = plan.users;
  report.n_users_evaluated = nu;
  if (nu == 0) throw ValidationError("eval_model: no user has a relevant item in the " + part + " set");

  std::vector<std::vector<int>> recs(nu);
  std::vector<AccuracyValues> acc(nu);
  std::vector<uint8_t> tail = long_tail_mask(tv.popularity);

  // Per-user work is pure and independent; aggregation below is serial and
  // order-fixed so reports are identical for any thread count.
#pragma omp parallel
  {
    std::vector<float> scores(data.n_items);
#pragma omp for schedule(static)
    for (long long uidx = 0; uidx < static_cast<long long>(nu); ++uidx) {
      int u = plan.users[static_cast<size_t>(uidx)];
      model.score_user(u, scores);
      recs[static_cast<size_t>(uidx)] =
          topk_from_scores(scores, plan.candidates, tv.user_pos[static_cast<size_t>(u)], k);
      acc[static_cast<size_t>(uidx)] =
          accuracy_metrics(recs[static_cast<size_t>(uidx)], plan.relevant[static_cast<size_t>(uidx)], k);
    }
  }

  auto& pu = report.per_user;
  for (const auto& name : kAllMetricNames)
    if (name != "coverage") pu[name].resize(nu);
  std::set<int> covered;
  for (size_t x = 0; x < nu; ++x) {
    int u = plan.users[x];
    pu["ndcg"][x] = acc[x].ndcg;
    pu["recall"][x] = acc[x].recall;
    pu["precision"][x] = acc[x].precision;
    pu["f1"][x] = acc[x].f1;
    pu["ap"][x] = acc[x].ap;
    pu["rr"][x] = acc[x].rr;
    for (int item : recs[x]) covered.insert(item);
    // Users whose train-history popularity is zero are excluded from PL.
    BeyondUserValues bv =
        beyond_accuracy_user(recs[x], tv.popularity, tail, tv.user_pos[static_cast<size_t>(u)]);
    pu["arp"][x] = bv.arp;
    pu["aplt"][x] = bv.aplt;
    pu["pl"][x] = bv.pl_defined ? bv.pl : std::numeric_limits<double>::quiet_NaN();
  }

  for (const auto& name : kAllMetricNames) {
    if (name == "coverage") continue;
    std::vector<double> vals;
    for (double v : pu[name])
      if (!std::isnan(v)) vals.push_back(v);
    report.n[name] = vals.size();
    report.mean[name] = compensated_mean(vals);
    report.stddev[name] = sample_std(vals, report.mean[name]);
  }
  report.mean["coverage"] = static_cast<double>(covered.size()) / static_cast<double>(data.n_items);
  report.stddev["coverage"] = 0.0;
  report.n["coverage"] = nu;
  return report;
}

SubsetGridResult subset_grid(RecModel& model, const Dataset& data, const Split& split,
                             const TrainView& tv, const std::string& part, int k,
                             const std::vector<std::string>& modalities) {
  std::vector<std::string> names = modalities.empty() ? model.eval_modalities() : modalities;
  std::vector<int> ids = resolve_subset(model, names);
  size_t n = ids.size();
  if (n < 2) throw ValidationError("subset_grid needs at least 2 modalities");
  if (n > 16) throw ValidationError("subset_grid supports at most 16 modalities");
  SubsetGridResult grid;
  grid.trained_modalities = names;
  for (uint32_t mask = 1; mask < (1u << n); ++mask) {
    SubsetGridRow row;
    row.bitmask = mask;
    std::vector<int> subset;
    for (size_t b = 0; b < n; ++b)
      if (mask & (1u << b)) {
        subset.push_back(ids[b]);
        row.modalities.push_back(names[b]);
      }
    row.report = eval_model(model, data, split, tv, part, k, subset);
    grid.rows.push_back(std::move(row));
  }
  return grid;
}

double regularized_incomplete_beta(double a, double b, double x) {
  if (x <= 0) return 0;
  if (x >= 1) return 1;
  // Continued fraction (Lentz), NR-style.
  auto betacf = [](double a_, double b_, double x_) {
    const int max_iter = 300;
    const double eps = 3e-16, fpmin = 1e-300;
    double qab = a_ + b_, qap = a_ + 1.0, qam = a_ - 1.0;
    double c = 1.0, d = 1.0 - qab * x_ / qap;
    if (std::abs(d) < fpmin) d = fpmin;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= max_iter; ++m) {
      int m2 = 2 * m;
      double aa = m * (b_ - m) * x_ / ((qam + m2) * (a_ + m2));
      d = 1.0 + aa * d;
      if (std::abs(d) < fpmin) d = fpmin;
      c = 1.0 + aa / c;
      if (std::abs(c) < fpmin) c = fpmin;
      d = 1.0 / d;
      h *= d * c;
      aa = -(a_ + m) * (qab + m) * x_ / ((a_ + m2) * (qap + m2));
      d = 1.0 + aa * d;
      if (std::abs(d) < fpmin) d = fpmin;
      c = 1.0 + aa / c;
      if (std::abs(c) < fpmin) c = fpmin;
      d = 1.0 / d;
      double del = d * c;
      h *= del;
      if (std::abs(del - 1.0) < eps) break;
    }
    return h;
  };
  double ln_beta = std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
  double front = std::exp(a * std::log(x) + b * std::log(1.0 - x) - ln_beta);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
  return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

TTestResult paired_ttest(std::span<const double> a, std::span<const double> b, int n_comparisons) {
  if (a.size() != b.size()) throw ValidationError("paired_ttest: length mismatch");
  if (a.size() < 2) throw ValidationError("paired_ttest: need at least 2 paired samples");
  if (n_comparisons < 1) throw ValidationError("paired_ttest: n_comparisons must be >= 1");
  size_t n = a.size();
  std::vector<double> d(n);
  for (size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
  double mean = compensated_mean(d);
  double var = 0;
  for (double v : d) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n - 1);
  TTestResult r;
  r.threshold = 0.05 / static_cast<double>(n_comparisons);
  if (var == 0) {
    r.zero_variance = true;
    if (mean == 0) {
      r.t = 0;
      r.p = 1;
      r.significant = false;
    } else {
      // all differences identical and nonzero: the statistic diverges
      r.t = mean > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
      r.p = 0;
      r.significant = true;
    }
    return r;
  }
  double df = static_cast<double>(n - 1);
  r.t = mean / std::sqrt(var / static_cast<double>(n));
  r.p = regularized_incomplete_beta(df / 2.0, 0.5, df / (df + r.t * r.t));
  r.significant = r.p < r.threshold;
  return r;
}

namespace {

std::string metric_cell(double v) {
  if (std::isnan(v)) return "";
  return fmt_double(v);
}

}  // namespace

void write_metric_report(const MetricReport& r, const fs::path& dir) {
  fs::create_directories(dir);
  std::string csv = "metric,mean,std,n\n";
  for (const auto& name : kAllMetricNames)
    csv += name + "," + fmt_double(r.mean.at(name)) + "," + fmt_double(r.stddev.at(name)) + "," +
           std::to_string(r.n.at(name)) + "\n";
  write_text_file(dir / "metrics.csv", csv);

  std::string per = "user";
  for (const auto& name : kAllMetricNames)
    if (name != "coverage") per += "," + name;
  per += "\n";
  for (size_t x = 0; x < r.users.size(); ++x) {
    per += std::to_string(r.users[x]);
    for (const auto& name : kAllMetricNames) {
      if (name == "coverage") continue;
      per += "," + metric_cell(r.per_user.at(name)[x]);
    }
    per += "\n";
  }
  write_text_file(dir / "per_user.csv", per);

  json j;
  j["k"] = r.k;
  j["n_users_evaluated"] = r.n_users_evaluated;
  for (const auto& name : kAllMetricNames) {
    j["mean"][name] = r.mean.at(name);
    j["std"][name] = r.stddev.at(name);
    j["n"][name] = r.n.at(name);
  }
  write_text_file(dir / "metrics.json", j.dump(2) + "\n");

  json jp;
  jp["users"] = r.users;
  for (const auto& [name, vals] : r.per_user) {
    json col = json::array();
    for (double v : vals)
      col.push_back(std::isnan(v) ? json() : json(v));
    jp["per_user"][name] = col;
  }
  write_text_file(dir / "per_user.json", jp.dump(2) + "\n");
}

MetricReport load_metric_report(const fs::path& dir) {
  MetricReport r;
  json j = json::parse(read_text_file(dir / "metrics.json"));
  r.k = j.at("k").get<int>();
  r.n_users_evaluated = j.at("n_users_evaluated").get<size_t>();
  for (const auto& name : kAllMetricNames) {
    r.mean[name] = j.at("mean").at(name).get<double>();
    r.stddev[name] = j.at("std").at(name).get<double>();
    r.n[name] = j.at("n").at(name).get<size_t>();
  }
  json jp = json::parse(read_text_file(dir / "per_user.json"));
  r.users = jp.at("users").get<std::vector<int>>();
  for (const auto& [name, col] : jp.at("per_user").items()) {
    std::vector<double> vals;
    for (const auto& v : col)
      vals.push_back(v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>());
    r.per_user[name] = vals;
  }
  return r;
}

void write_grid(const SubsetGridResult& grid, const fs::path& dir) {
  fs::create_directories(dir);
  std::string csv = "bitmask,modalities,n_users";
  for (const auto& name : kAllMetricNames) csv += "," + name;
  csv += "\n";
  for (const auto& row : grid.rows) {
    std::string mods;
    for (size_t i = 0; i < row.modalities.size(); ++i)
      mods += (i ? ";" : "") + row.modalities[i];
    csv += std::to_string(row.bitmask) + "," + mods + "," + std::to_string(row.report.n_users_evaluated);
    for (const auto& name : kAllMetricNames) csv += "," + fmt_double(row.report.mean.at(name));
    csv += "\n";
  }
  write_text_file(dir / "grid.csv", csv);

  json j;
  j["trained_modalities"] = grid.trained_modalities;
  j["rows"] = json::array();
  for (const auto& row : grid.rows) {
    json jr;
    jr["bitmask"] = row.bitmask;
    jr["modalities"] = row.modalities;
    jr["n_users"] = row.report.n_users_evaluated;
    for (const auto& name : kAllMetricNames) jr["mean"][name] = row.report.mean.at(name);
    j["rows"].push_back(jr);
  }
  write_text_file(dir / "grid.json", j.dump(2) + "\n");
}

}  // namespace mmrec
