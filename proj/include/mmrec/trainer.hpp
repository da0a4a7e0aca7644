#ifndef MMREC_TRAINER_HPP
#define MMREC_TRAINER_HPP

#include <filesystem>
#include <functional>
#include <memory>

#include "mmrec/metrics.hpp"
#include "mmrec/models.hpp"

namespace mmrec {

struct TrainConfig {
  int max_epochs = 50;
  int patience = 5;
  double lr = 1e-3;
  double weight_decay = 0.0;
  int batch_size = 128;
  int eval_k = 10;
  uint64_t seed = 0;

  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct EpochStats {
  double train_loss = 0;  // per-interaction mean over the epoch
  double val_ndcg = 0;
  double wall_sec = 0;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
  int best_epoch = 0;  // 1-based; 0 for non-trainable models
};

// Epoch loop with early stopping on validation NDCG@eval_k (strict improvement,
// `patience` consecutive non-improving epochs). The model is left holding the
// best epoch's weights (including batchnorm running statistics), in eval mode.
// `val_override`, when set, replaces the validation evaluation (tests script
// the curve through it).
TrainHistory train(RecModel& model, const Dataset& data, const Split& split, const TrainView& tv,
                   const TrainConfig& cfg, std::function<double(int epoch)> val_override = {});

void save_history(const TrainHistory& h, const std::filesystem::path& dir);

void save_checkpoint(RecModel& model, const std::filesystem::path& dir);
std::unique_ptr<RecModel> load_checkpoint(const std::filesystem::path& dir, const Dataset& data,
                                          const TrainView& tv);

}  // namespace mmrec

#endif
