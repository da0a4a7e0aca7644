#ifndef MMREC_SPLITS_HPP
#define MMREC_SPLITS_HPP

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mmrec/dataset.hpp"
#include "mmrec/rng.hpp"

namespace mmrec {

enum class Scenario { warm, user_cold, item_cold };

std::string scenario_name(Scenario s);
Scenario scenario_from_name(const std::string& name);

struct Split {
  Scenario scenario = Scenario::warm;
  std::vector<std::pair<int, int>> train, val, test;  // each sorted by (user, item)
  uint64_t seed = 0;
  std::array<double, 3> ratios{0.8, 0.1, 0.1};
};

// Per-user 80/10/10 with floor-based val/test counts; small profiles may get
// empty val/test sets.
Split split_warm(const Dataset& d, std::array<double, 3> ratios, uint64_t seed);

// Disjoint entity partition; every interaction travels with its split entity.
Split split_cold(const Dataset& d, const std::string& entity, std::array<double, 3> ratios, uint64_t seed);

void save_split(const Split& s, const std::filesystem::path& dir);
Split load_split(const std::filesystem::path& dir);

// Train-side view shared by samplers, models and evaluation.
struct TrainView {
  size_t n_users = 0, n_items = 0;
  std::vector<std::vector<int>> user_pos;  // train items per user, sorted
  std::vector<std::vector<int>> item_pos;  // train users per item, sorted
  std::vector<double> popularity;          // phi(i) = |train users of i| / n_users
  // Negative-sampling universe: all items, except in the item-cold scenario
  // where it is restricted to train-partition items.
  std::vector<int> item_universe;
  Scenario scenario = Scenario::warm;

  static TrainView build(const Dataset& d, const Split& s);
  bool is_train_positive(int user, int item) const;
};

// n_neg draws uniform over `universe` minus the user's train positives.
// Within one call duplicates are re-drawn a bounded number of times and then
// accepted; across calls draws are independent. Throws when every universe
// item is a train positive.
std::vector<int> sample_negatives(int n_neg, const std::vector<int>& user_train_items,
                                  std::span<const int> universe, SeededRng& rng);
std::vector<int> sample_negatives(int user, int n_neg, const TrainView& tv, SeededRng& rng);

// Uniform without replacement; the returned ids are distinct.
std::vector<int> sample_modalities(const std::vector<int>& available, int n_mod, SeededRng& rng);

// One epoch of batches: a seeded permutation of the pairs, chunked; the last
// batch may be short.
std::vector<std::vector<std::pair<int, int>>> make_batches(const std::vector<std::pair<int, int>>& pairs,
                                                           size_t batch_size, uint64_t shuffle_seed);

}  // namespace mmrec

#endif
