#ifndef MMREC_METRICS_HPP
#define MMREC_METRICS_HPP

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mmrec/models.hpp"
#include "mmrec/splits.hpp"

namespace mmrec {

inline const std::vector<std::string> kAccuracyMetricNames{"ndcg", "recall", "precision",
                                                           "f1",   "ap",     "rr"};
inline const std::vector<std::string> kAllMetricNames{"ndcg", "recall", "precision", "f1",  "ap",
                                                      "rr",   "coverage", "arp",     "aplt", "pl"};

struct AccuracyValues {
  double ndcg = 0, recall = 0, precision = 0, f1 = 0, ap = 0, rr = 0;
};

// Top-k accuracy metrics for one user. `relevant` must be sorted and non-empty;
// `recs` must hold distinct items (throws otherwise).
AccuracyValues accuracy_metrics(std::span<const int> recs, const std::vector<int>& relevant, int k);

// Long tail: the ceil(tail_fraction * n_items) items of lowest popularity,
// ties broken by ascending item index.
std::vector<uint8_t> long_tail_mask(const std::vector<double>& popularity, double tail_fraction = 0.8);

struct BeyondUserValues {
  double arp = 0;
  double aplt = 0;
  double pl = 0;
  bool pl_defined = false;  // false when the user's history popularity is zero
};

// Per-user popularity-bias metrics; phi comes from the train split only.
BeyondUserValues beyond_accuracy_user(std::span<const int> recs, const std::vector<double>& popularity,
                                      const std::vector<uint8_t>& tail_mask,
                                      const std::vector<int>& train_history);

// k highest-scoring candidates, ties broken by ascending item index;
// `exclude` is sorted. Throws when fewer than k candidates remain.
std::vector<int> topk_from_scores(std::span<const float> scores, std::span<const int> candidates,
                                  const std::vector<int>& exclude, int k);

struct MetricReport {
  int k = 10;
  size_t n_users_evaluated = 0;
  std::vector<int> users;                              // evaluated users, ascending
  std::map<std::string, std::vector<double>> per_user;  // NaN = user excluded for that metric
  std::map<std::string, double> mean;
  std::map<std::string, double> stddev;
  std::map<std::string, size_t> n;  // users contributing to each mean
};

// Full evaluation protocol for one modality subset (ids into the model's
// eval_modalities; empty = all). `part` selects "val" or "test". Candidate
// items and evaluated users follow the split scenario: warm ranks the catalog
// minus the user's train positives, item-cold ranks only the partition's
// items, user-cold evaluates only the partition's users.
MetricReport eval_model(RecModel& model, const Dataset& data, const Split& split, const TrainView& tv,
                        const std::string& part, int k, const std::vector<int>& subset);

std::vector<int> resolve_subset(const RecModel& model, const std::vector<std::string>& names);

struct SubsetGridRow {
  uint32_t bitmask = 0;
  std::vector<std::string> modalities;
  MetricReport report;
};

struct SubsetGridResult {
  std::vector<std::string> trained_modalities;
  std::vector<SubsetGridRow> rows;  // all 2^n - 1 non-empty subsets, bitmask ascending
};

SubsetGridResult subset_grid(RecModel& model, const Dataset& data, const Split& split,
                             const TrainView& tv, const std::string& part, int k,
                             const std::vector<std::string>& modalities = {});

struct TTestResult {
  double t = 0;
  double p = 1;
  double threshold = 0.05;
  bool significant = false;
  bool zero_variance = false;
};

// Two-sided paired t-test with Bonferroni-corrected threshold 0.05/n_comparisons.
TTestResult paired_ttest(std::span<const double> a, std::span<const double> b, int n_comparisons);

// Regularized incomplete beta I_x(a, b); exposed for the significance tests.
double regularized_incomplete_beta(double a, double b, double x);

// Kahan-compensated mean; the aggregation contract for all reported means.
double compensated_mean(std::span<const double> values);

void write_metric_report(const MetricReport& r, const std::filesystem::path& dir);
MetricReport load_metric_report(const std::filesystem::path& dir);
void write_grid(const SubsetGridResult& grid, const std::filesystem::path& dir);

}  // namespace mmrec

#endif
