#include "mmrec/trainer.hpp"

#include <chrono>
#include <cstring>
#include <fstream>

#include "mmrec/common.hpp"

namespace mmrec {

using nlohmann::json;
namespace fs = std::filesystem;

json TrainConfig::to_json() const {
  return json{{"max_epochs", max_epochs}, {"patience", patience},     {"lr", lr},
              {"weight_decay", weight_decay}, {"batch_size", batch_size}, {"eval_k", eval_k},
              {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.patience = j.value("patience", c.patience);
  c.lr = j.value("lr", c.lr);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.eval_k = j.value("eval_k", c.eval_k);
  c.seed = j.value("seed", c.seed);
  return c;
}

namespace {

std::vector<Tensor> snapshot(RecModel& model) {
  std::vector<Tensor> out;
  for (auto& [name, t] : model.named_tensors()) out.push_back(*t);
  return out;
}

void restore(RecModel& model, const std::vector<Tensor>& snap) {
  auto named = model.named_tensors();
  for (size_t i = 0; i < named.size(); ++i) *named[i].second = snap[i];
}

}  // namespace

TrainHistory train(RecModel& model, const Dataset& data, const Split& split, const TrainView& tv,
                   const TrainConfig& cfg, std::function<double(int epoch)> val_override) {
  if (cfg.max_epochs < 1) throw ValidationError("max_epochs must be >= 1");
  if (cfg.patience < 1) throw ValidationError("patience must be >= 1");
  if (cfg.batch_size < 1) throw ValidationError("batch_size must be >= 1");

  TrainHistory history;
  auto validate = [&](int epoch) {
    if (val_override) return val_override(epoch);
    model.set_train(false);
    double v = eval_model(model, data, split, tv, "val", cfg.eval_k, {}).mean.at("ndcg");
    model.set_train(true);
    return v;
  };

  if (!model.trainable()) {
    model.set_train(false);
    return history;
  }

  if (!val_override) {
    bool any_val = false;
    for (auto& [u, i] : split.val) {
      (void)u;
      (void)i;
      any_val = true;
      break;
    }
    if (!any_val)
      throw ValidationError("training aborted: validation set is empty, nothing to select the best epoch on");
  }

  std::vector<Parameter*> params = model.parameters();
  AdamConfig adam{cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay};
  SeededRng neg_rng(cfg.seed, "negatives");
  SeededRng mod_rng(cfg.seed, "modalities");

  double best_val = -std::numeric_limits<double>::infinity();
  std::vector<Tensor> best_snapshot = snapshot(model);
  int bad_epochs = 0;
  long long step = 0;

  model.set_train(true);
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    auto batches = make_batches(split.train, static_cast<size_t>(cfg.batch_size),
                                hash64(cfg.seed, "shuffle.epoch." + std::to_string(epoch)));
    double loss_sum = 0;
    size_t pair_count = 0;
    for (size_t bi = 0; bi < batches.size(); ++bi) {
      BatchPlan plan = make_batch_plan(batches[bi], tv, model.plan_item_access(),
                                       model.plan_user_access(), model.config(), neg_rng, mod_rng);
      Graph g;
      Graph::Var loss = model.batch_loss(g, plan);
      double lv = static_cast<double>(g.value(loss).data[0]);
      if (!std::isfinite(lv))
        throw std::runtime_error("non-finite training loss at epoch " + std::to_string(epoch) +
                                 ", batch " + std::to_string(bi + 1));
      g.backward(loss);
      adam_step<float>(params, adam, ++step);
      loss_sum += lv;
      pair_count += batches[bi].size();
    }

    EpochStats stats;
    stats.train_loss = pair_count > 0 ? loss_sum / static_cast<double>(pair_count) : 0.0;
    stats.val_ndcg = validate(epoch);
    stats.wall_sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    history.epochs.push_back(stats);

    if (stats.val_ndcg > best_val) {
      best_val = stats.val_ndcg;
      history.best_epoch = epoch;
      best_snapshot = snapshot(model);
      bad_epochs = 0;
    } else {
      ++bad_epochs;
      if (bad_epochs >= cfg.patience) break;
    }
  }

  restore(model, best_snapshot);
  model.set_train(false);
  return history;
}

void save_history(const TrainHistory& h, const fs::path& dir) {
  fs::create_directories(dir);
  std::string csv = "epoch,train_loss,val_ndcg10\n";
  for (size_t e = 0; e < h.epochs.size(); ++e)
    csv += std::to_string(e + 1) + "," + fmt_double(h.epochs[e].train_loss) + "," +
           fmt_double(h.epochs[e].val_ndcg) + "\n";
  write_text_file(dir / "history.csv", csv);
}

void save_checkpoint(RecModel& model, const fs::path& dir) {
  fs::create_directories(dir);
  auto named = model.named_tensors();
  json j;
  j["format"] = "mmrec-checkpoint";
  j["version"] = 1;
  j["init_scheme"] = "linear: uniform ±sqrt(6/(fan_in+fan_out)), bias zero, tables normal(0, 0.1)";
  j["batchnorm"] = {{"momentum", 0.1}, {"eps", 1e-5}};
  j["model_config"] = model.config().to_json();
  j["entries"] = json::array();
  size_t offset = 0;
  std::string bin;
  for (auto& [name, t] : named) {
    j["entries"].push_back({{"name", name}, {"shape", t->shape}, {"offset", offset}});
    bin.append(reinterpret_cast<const char*>(t->data.data()), t->numel() * sizeof(float));
    offset += t->numel();
  }
  j["total_values"] = offset;
  write_text_file(dir / "params.json", j.dump(2) + "\n");
  write_text_file(dir / "params.bin", bin);
}

std::unique_ptr<RecModel> load_checkpoint(const fs::path& dir, const Dataset& data, const TrainView& tv) {
  if (!fs::exists(dir / "params.json"))
    throw ValidationError("checkpoint not found (missing params.json): " + dir.string());
  json j;
  try {
    j = json::parse(read_text_file(dir / "params.json"));
  } catch (const json::exception& e) {
    throw ValidationError("corrupt checkpoint header: " + std::string(e.what()));
  }
  if (j.value("format", "") != "mmrec-checkpoint" || j.value("version", 0) != 1)
    throw ValidationError("checkpoint version mismatch in " + dir.string());
  ModelConfig cfg = ModelConfig::from_json(j.at("model_config"));
  auto model = make_model<float>(cfg, data, tv);
  auto named = model->named_tensors();

  std::string bin = read_text_file(dir / "params.bin");
  size_t total = j.at("total_values").get<size_t>();
  if (bin.size() != total * sizeof(float))
    throw ValidationError("corrupt checkpoint: params.bin holds " + std::to_string(bin.size()) +
                          " bytes, header expects " + std::to_string(total * sizeof(float)));
  const auto& entries = j.at("entries");
  if (entries.size() != named.size())
    throw ValidationError("checkpoint entry count does not match the model configuration");
  for (size_t e = 0; e < entries.size(); ++e) {
    const auto& je = entries[e];
    auto& [name, t] = named[e];
    if (je.at("name").get<std::string>() != name)
      throw ValidationError("checkpoint entry '" + je.at("name").get<std::string>() +
                            "' does not match expected tensor '" + name + "'");
    std::vector<size_t> shape = je.at("shape").get<std::vector<size_t>>();
    if (shape != t->shape)
      throw ValidationError("shape mismatch for checkpoint tensor '" + name + "'");
    size_t offset = je.at("offset").get<size_t>();
    if ((offset + t->numel()) * sizeof(float) > bin.size())
      throw ValidationError("corrupt checkpoint: tensor '" + name + "' exceeds payload");
    std::memcpy(t->data.data(), bin.data() + offset * sizeof(float), t->numel() * sizeof(float));
  }
  model->set_train(false);
  return model;
}

}  // namespace mmrec
