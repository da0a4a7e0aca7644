#ifndef MMREC_GAP_HPP
#define MMREC_GAP_HPP

#include <filesystem>
#include <string>
#include <vector>

#include "mmrec/models.hpp"
#include "mmrec/tensor.hpp"

namespace mmrec {

enum class GapMetric { euclidean, cosine };

// Frozen per-modality embeddings of one item subset; all matrices share shape.
struct EmbeddingBank {
  std::vector<std::string> modalities;
  std::vector<Tensor> embs;  // per modality: n_items x d
  std::vector<int> items;
};

// Eval-mode bank over the model's modalities, restricted to entities with every
// listed modality available.
EmbeddingBank build_bank(RecModel& model, std::span<const int> entities,
                         const std::vector<std::string>& modalities = {});

// Average pairwise f between different modalities of the same item.
double intra_metric(const EmbeddingBank& bank, GapMetric f);
// Average pairwise f between different items under the same modality.
double inter_metric(const EmbeddingBank& bank, GapMetric f);

struct PcaResult {
  std::vector<Tensor> projected;          // per modality: n_items x n_components
  std::vector<double> explained_ratio;    // per component, non-increasing
  TensorT<double> components;             // n_components x d
  std::vector<double> mean;               // d
};

// One shared basis fitted on the pooled rows of all modalities.
PcaResult pca_project(const EmbeddingBank& bank, size_t n_components);

struct ProbeResult {
  std::vector<double> per_seed_accuracy;
  double mean_accuracy = 0;
  double random_baseline = 0;
};

// Modality-prediction probe: multinomial logistic classifier on
// (embedding -> modality id), item-level 80/20 splits, averaged over seeds.
ProbeResult separability_probe(const EmbeddingBank& bank, double split_ratio = 0.8, int n_seeds = 20,
                               uint64_t seed = 0);

// Probe on arbitrary labeled rows (the label-permutation guard uses this).
double probe_accuracy_once(const Tensor& train_x, const std::vector<int>& train_y, const Tensor& test_x,
                           const std::vector<int>& test_y, int n_classes, uint64_t seed);

void write_gap_csv(const EmbeddingBank& bank, const std::filesystem::path& dir);
void write_projection_csv(const EmbeddingBank& bank, const PcaResult& pca,
                          const std::filesystem::path& dir, size_t max_items = 500, uint64_t seed = 0);
void write_probe_csv(const ProbeResult& probe, const std::filesystem::path& dir);

// Symmetric eigendecomposition (cyclic Jacobi); eigenvalues descending.
void symmetric_eigen(const TensorT<double>& matrix, std::vector<double>& eigenvalues,
                     TensorT<double>& eigenvectors);

}  // namespace mmrec

#endif
