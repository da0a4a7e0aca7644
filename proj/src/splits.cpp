#include "mmrec/splits.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include <json.hpp>

#include "mmrec/common.hpp"

namespace mmrec {

using nlohmann::json;
namespace fs = std::filesystem;

std::string scenario_name(Scenario s) {
  switch (s) {
    case Scenario::warm: return "warm";
    case Scenario::user_cold: return "user-cold";
    case Scenario::item_cold: return "item-cold";
  }
  return "warm";
}

Scenario scenario_from_name(const std::string& name) {
  if (name == "warm") return Scenario::warm;
  if (name == "user-cold") return Scenario::user_cold;
  if (name == "item-cold") return Scenario::item_cold;
  throw ValidationError("unknown scenario '" + name + "' (warm | user-cold | item-cold)");
}

namespace {

void check_ratios(const std::array<double, 3>& r) {
  for (double x : r)
    if (x < 0) throw ValidationError("split ratios must be non-negative");
  double sum = r[0] + r[1] + r[2];
  if (std::abs(sum - 1.0) > 1e-9) throw ValidationError("split ratios must sum to 1");
}

void sort_split(Split& s) {
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.val.begin(), s.val.end());
  std::sort(s.test.begin(), s.test.end());
}

}  // namespace

Split split_warm(const Dataset& d, std::array<double, 3> ratios, uint64_t seed) {
  check_ratios(ratios);
  Split s;
  s.scenario = Scenario::warm;
  s.seed = seed;
  s.ratios = ratios;
  for (size_t u = 0; u < d.n_users; ++u) {
    const std::vector<int>& items = d.user_items[u];
    if (items.empty())
      throw ValidationError("warm split: user index " + std::to_string(u) + " has no interactions");
    std::vector<int> shuffled = items;  // already sorted: stable base order
    SeededRng rng(seed, "split-warm.user." + std::to_string(u));
    rng.shuffle(shuffled);
    size_t n = shuffled.size();
    size_t n_val = static_cast<size_t>(ratios[1] * static_cast<double>(n));
    size_t n_test = static_cast<size_t>(ratios[2] * static_cast<double>(n));
    int ui = static_cast<int>(u);
    for (size_t k = 0; k < n; ++k) {
      if (k < n_test)
        s.test.emplace_back(ui, shuffled[k]);
      else if (k < n_test + n_val)
        s.val.emplace_back(ui, shuffled[k]);
      else
        s.train.emplace_back(ui, shuffled[k]);
    }
  }
  sort_split(s);
  return s;
}

Split split_cold(const Dataset& d, const std::string& entity, std::array<double, 3> ratios, uint64_t seed) {
  check_ratios(ratios);
  bool user_side = (entity == "user");
  if (!user_side && entity != "item") throw ValidationError("split_cold: entity must be 'user' or 'item'");
  size_t count = user_side ? d.n_users : d.n_items;
  size_t n_val = static_cast<size_t>(ratios[1] * static_cast<double>(count));
  size_t n_test = static_cast<size_t>(ratios[2] * static_cast<double>(count));
  if (n_val < 1 || n_test < 1 || n_val + n_test >= count)
    throw ValidationError("split_cold: too few " + entity + "s (" + std::to_string(count) +
                          ") for at least one entity per partition");

  std::vector<int> order(count);
  for (size_t i = 0; i < count; ++i) order[i] = static_cast<int>(i);
  SeededRng rng(seed, user_side ? "split-cold.user" : "split-cold.item");
  rng.shuffle(order);

  // 0 = train, 1 = val, 2 = test
  std::vector<uint8_t> part(count, 0);
  for (size_t k = 0; k < n_test; ++k) part[static_cast<size_t>(order[k])] = 2;
  for (size_t k = n_test; k < n_test + n_val; ++k) part[static_cast<size_t>(order[k])] = 1;

  Split s;
  s.scenario = user_side ? Scenario::user_cold : Scenario::item_cold;
  s.seed = seed;
  s.ratios = ratios;
  for (auto [u, i] : d.interactions) {
    uint8_t p = part[static_cast<size_t>(user_side ? u : i)];
    if (p == 0)
      s.train.emplace_back(u, i);
    else if (p == 1)
      s.val.emplace_back(u, i);
    else
      s.test.emplace_back(u, i);
  }
  sort_split(s);
  return s;
}

namespace {

std::string pairs_to_tsv(const std::vector<std::pair<int, int>>& pairs) {
  std::string out;
  for (auto [u, i] : pairs) out += std::to_string(u) + "\t" + std::to_string(i) + "\n";
  return out;
}

std::vector<std::pair<int, int>> pairs_from_tsv(const fs::path& p) {
  std::vector<std::pair<int, int>> out;
  std::istringstream in(read_text_file(p));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    size_t tab = line.find('\t');
    if (tab == std::string::npos) throw ValidationError("split file line needs user<TAB>item: " + p.string());
    out.emplace_back(std::stoi(line.substr(0, tab)), std::stoi(line.substr(tab + 1)));
  }
  return out;
}

}  // namespace

void save_split(const Split& s, const fs::path& dir) {
  fs::create_directories(dir);
  write_text_file(dir / "train.tsv", pairs_to_tsv(s.train));
  write_text_file(dir / "val.tsv", pairs_to_tsv(s.val));
  write_text_file(dir / "test.tsv", pairs_to_tsv(s.test));
  json j{{"scenario", scenario_name(s.scenario)},
         {"seed", s.seed},
         {"ratios", {s.ratios[0], s.ratios[1], s.ratios[2]}}};
  write_text_file(dir / "split.json", j.dump(2) + "\n");
}

Split load_split(const fs::path& dir) {
  if (!fs::exists(dir / "split.json")) throw ValidationError("split.json not found in " + dir.string());
  json j = json::parse(read_text_file(dir / "split.json"));
  Split s;
  s.scenario = scenario_from_name(j.at("scenario").get<std::string>());
  s.seed = j.at("seed").get<uint64_t>();
  auto r = j.at("ratios");
  s.ratios = {r[0].get<double>(), r[1].get<double>(), r[2].get<double>()};
  s.train = pairs_from_tsv(dir / "train.tsv");
  s.val = pairs_from_tsv(dir / "val.tsv");
  s.test = pairs_from_tsv(dir / "test.tsv");
  return s;
}

TrainView TrainView::build(const Dataset& d, const Split& s) {
  TrainView tv;
  tv.n_users = d.n_users;
  tv.n_items = d.n_items;
  tv.scenario = s.scenario;
  tv.user_pos.assign(d.n_users, {});
  tv.item_pos.assign(d.n_items, {});
  for (auto [u, i] : s.train) {
    tv.user_pos[static_cast<size_t>(u)].push_back(i);
    tv.item_pos[static_cast<size_t>(i)].push_back(u);
  }
  for (auto& v : tv.user_pos) std::sort(v.begin(), v.end());
  for (auto& v : tv.item_pos) std::sort(v.begin(), v.end());
  tv.popularity.assign(d.n_items, 0.0);
  for (size_t i = 0; i < d.n_items; ++i)
    tv.popularity[i] = static_cast<double>(tv.item_pos[i].size()) / static_cast<double>(d.n_users);
  if (s.scenario == Scenario::item_cold) {
    for (size_t i = 0; i < d.n_items; ++i)
      if (!tv.item_pos[i].empty()) tv.item_universe.push_back(static_cast<int>(i));
  } else {
    tv.item_universe.resize(d.n_items);
    for (size_t i = 0; i < d.n_items; ++i) tv.item_universe[i] = static_cast<int>(i);
  }
  return tv;
}

bool TrainView::is_train_positive(int user, int item) const {
  const std::vector<int>& v = user_pos[static_cast<size_t>(user)];
  return std::binary_search(v.begin(), v.end(), item);
}

std::vector<int> sample_negatives(int n_neg, const std::vector<int>& user_train_items,
                                  std::span<const int> universe, SeededRng& rng) {
  if (n_neg < 1) throw ValidationError("sample_negatives: n_neg must be >= 1");
  auto is_positive = [&](int item) {
    return std::binary_search(user_train_items.begin(), user_train_items.end(), item);
  };
  std::vector<int> out;
  out.reserve(static_cast<size_t>(n_neg));
  std::set<int> drawn;
  constexpr int kPositiveRetries = 64;
  constexpr int kDuplicateRetries = 16;
  // Complement list built lazily if rejection keeps hitting positives.
  std::vector<int> complement;
  bool have_complement = false;
  auto draw_one = [&]() -> int {
    for (int t = 0; t < kPositiveRetries; ++t) {
      int item = universe[static_cast<size_t>(rng.uniform(universe.size()))];
      if (!is_positive(item)) return item;
    }
    if (!have_complement) {
      for (int item : universe)
        if (!is_positive(item)) complement.push_back(item);
      have_complement = true;
      if (complement.empty())
        throw ValidationError("sample_negatives: user interacted with every candidate item");
    }
    return complement[static_cast<size_t>(rng.uniform(complement.size()))];
  };
  if (universe.empty()) throw ValidationError("sample_negatives: empty candidate universe");
  for (int k = 0; k < n_neg; ++k) {
    int item = draw_one();
    for (int t = 0; t < kDuplicateRetries && drawn.count(item); ++t) item = draw_one();
    drawn.insert(item);
    out.push_back(item);
  }
  return out;
}

std::vector<int> sample_negatives(int user, int n_neg, const TrainView& tv, SeededRng& rng) {
  return sample_negatives(n_neg, tv.user_pos[static_cast<size_t>(user)], tv.item_universe, rng);
}

std::vector<int> sample_modalities(const std::vector<int>& available, int n_mod, SeededRng& rng) {
  if (n_mod < 1) throw ValidationError("sample_modalities: n_mod must be >= 1");
  if (static_cast<size_t>(n_mod) > available.size())
    throw ValidationError("sample_modalities: only " + std::to_string(available.size()) +
                          " modalities available, need " + std::to_string(n_mod));
  if (n_mod == 1) return {available[static_cast<size_t>(rng.uniform(available.size()))]};
  // Partial Fisher-Yates over a copy.
  std::vector<int> pool = available;
  std::vector<int> out;
  out.reserve(static_cast<size_t>(n_mod));
  for (int k = 0; k < n_mod; ++k) {
    size_t j = static_cast<size_t>(k) + static_cast<size_t>(rng.uniform(pool.size() - static_cast<size_t>(k)));
    std::swap(pool[static_cast<size_t>(k)], pool[j]);
    out.push_back(pool[static_cast<size_t>(k)]);
  }
  return out;
}

std::vector<std::vector<std::pair<int, int>>> make_batches(const std::vector<std::pair<int, int>>& pairs,
                                                           size_t batch_size, uint64_t shuffle_seed) {
  if (batch_size < 1) throw ValidationError("make_batches: batch_size must be >= 1");
  std::vector<std::pair<int, int>> order = pairs;
  SeededRng rng(shuffle_seed, "batch-shuffle");
  rng.shuffle(order);
  std::vector<std::vector<std::pair<int, int>>> batches;
  for (size_t start = 0; start < order.size(); start += batch_size) {
    size_t end = std::min(order.size(), start + batch_size);
    batches.emplace_back(order.begin() + static_cast<long>(start), order.begin() + static_cast<long>(end));
  }
  return batches;
}

}  // namespace mmrec
