#ifndef MMREC_DATASET_HPP
#define MMREC_DATASET_HPP

#include <filesystem>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "mmrec/tensor.hpp"

namespace mmrec {

// Per-entity dense side information plus an availability mask. Rows flagged
// unavailable are never read by samplers or encoders.
struct ModalityStore {
  std::string name;
  std::string entity;  // "user" | "item"
  size_t dim = 0;
  Tensor matrix;  // n_entities x dim
  std::vector<uint8_t> available;
};

struct ManifestModality {
  std::string name;
  std::string entity;
  size_t dim = 0;
  std::string file;
  std::string format;  // "mmr1" | "csv"
  std::string mask_file;  // optional
};

struct Manifest {
  std::string name;
  std::string users_file;
  std::string items_file;
  std::string interactions_file;
  std::vector<ManifestModality> modalities;
};

struct Dataset {
  std::string name;
  size_t n_users = 0;
  size_t n_items = 0;
  std::vector<std::string> user_ids;  // index = line number in users file
  std::vector<std::string> item_ids;
  std::vector<std::pair<int, int>> interactions;  // sorted by (user, item), unique
  std::vector<ModalityStore> user_modalities;
  std::vector<ModalityStore> item_modalities;

  // Derived adjacency, sorted.
  std::vector<std::vector<int>> user_items;
  std::vector<std::vector<int>> item_users;

  void rebuild_adjacency();
};

Manifest parse_manifest(const std::filesystem::path& manifest_path);
Dataset load_dataset(const std::filesystem::path& manifest_path);

// Writes the full dataset-core directory layout (users.tsv, items.tsv,
// interactions.tsv, modality matrices, masks, dataset.json). Deterministic:
// identical datasets produce byte-identical directories.
void save_dataset(const Dataset& d, const std::filesystem::path& dir);

// Keeps (user, item) for triples with value >= threshold, in input order.
std::vector<std::pair<std::string, std::string>> binarize_feedback(
    const std::vector<std::tuple<std::string, std::string, double>>& raw_triples, double threshold);

// Iterated k-core: removes users with < k_user and items with < k_item
// interactions until a fixed point. Preserves input order of survivors.
std::vector<std::pair<int, int>> core_filter(const std::vector<std::pair<int, int>>& pairs, int k_user,
                                             int k_item);

// Dense matrix binary format "MMR1": magic `MMR1`, u32-LE rows, u32-LE cols,
// then rows*cols f32-LE row-major.
Tensor load_mmr1(const std::filesystem::path& p);
void save_mmr1(const std::filesystem::path& p, const Tensor& m);

// CSV alternative: header `id,v0,...,v{d-1}`; one row per entity, matched by raw id.
Tensor load_matrix_csv(const std::filesystem::path& p, const std::vector<std::string>& registry_ids,
                       size_t expected_dim);

std::vector<uint8_t> load_mask(const std::filesystem::path& p, size_t n_entities);

}  // namespace mmrec

#endif
