#ifndef MMREC_TEST_UTIL_HPP
#define MMREC_TEST_UTIL_HPP

#include <filesystem>
#include <random>
#include <string>

#include "mmrec/dataset.hpp"
#include "mmrec/rng.hpp"
#include "mmrec/splits.hpp"

namespace mmrec::test {

// Self-cleaning temp directory.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           ("mmrec_test_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  operator std::filesystem::path() const { return path; }
};

// Small in-memory dataset: n_users x n_items with the given interaction pairs
// and optional item modalities (random features).
inline Dataset tiny_dataset(size_t n_users, size_t n_items,
                            std::vector<std::pair<int, int>> pairs,
                            std::vector<std::pair<std::string, size_t>> item_mods = {},
                            uint64_t seed = 99) {
  Dataset d;
  d.name = "tiny";
  d.n_users = n_users;
  d.n_items = n_items;
  for (size_t u = 0; u < n_users; ++u) d.user_ids.push_back("u" + std::to_string(u));
  for (size_t i = 0; i < n_items; ++i) d.item_ids.push_back("i" + std::to_string(i));
  std::sort(pairs.begin(), pairs.end());
  pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
  d.interactions = std::move(pairs);
  SeededRng rng(seed, "tiny-dataset");
  for (auto& [name, dim] : item_mods) {
    ModalityStore s;
    s.name = name;
    s.entity = "item";
    s.dim = dim;
    s.matrix = Tensor({n_items, dim});
    for (float& v : s.matrix.data) v = static_cast<float>(rng.normal());
    s.available.assign(n_items, 1);
    d.item_modalities.push_back(std::move(s));
  }
  d.rebuild_adjacency();
  return d;
}

// Every-user-knows-every-item interactions for k-core style cases.
inline std::vector<std::pair<int, int>> full_bipartite(int n_users, int n_items) {
  std::vector<std::pair<int, int>> out;
  for (int u = 0; u < n_users; ++u)
    for (int i = 0; i < n_items; ++i) out.emplace_back(u, i);
  return out;
}

}  // namespace mmrec::test

#endif
