#ifndef MMREC_MODELS_HPP
#define MMREC_MODELS_HPP

#include <array>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmrec/autodiff.hpp"
#include "mmrec/splits.hpp"

namespace mmrec {

inline constexpr const char* kInteractionsModality = "interactions";

struct LossConfig {
  double alpha = 0.0;  // item-side contrastive weight
  double beta = 0.0;   // user-side contrastive weight (user-item variant)
  double tau = 0.1;    // contrastive temperature
  int n_neg = 10;
};

struct ModelConfig {
  std::string kind = "sibrar";  // sibrar | mubrar | mf | deepmf | pop | rand
  std::string variant;          // sibrar/mubrar: vanilla | s | sc (mubrar only has vanilla)
  std::string side = "item";    // sibrar: item | user | both
  int shared_dim = 64;          // input width of the single-branch network g
  std::vector<int> g_layers = {64};
  std::vector<int> branch_layers = {64};
  int embedding_dim = 64;
  bool batchnorm = true;
  double dropout = 0.0;
  LossConfig loss;
  std::vector<std::string> train_modalities;  // item side; empty = all + interactions
  std::vector<std::string> user_train_modalities;  // user side (sibrar user/both)
  std::string user_embedder = "lookup";  // h for item-side models: lookup | encoder
  std::string item_embedder = "lookup";  // h for user-side models
  std::vector<int> tower_layers = {64};  // deepmf / profile-encoder hidden sizes
  bool tower_relu_input = true;          // deepmf: ReLU on interactions
  bool tower_relu_output = true;         // deepmf: ReLU on embeddings
  double min_score = 1e-6;               // deepmf clamp
  uint64_t init_seed = 0;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);

  // Resolved variant: "sc" when contrastive training applies, "s" when only
  // modality sampling does, "vanilla" when neither (mubrar only).
  std::string resolved_variant() const;
  bool contrastive() const { return resolved_variant() == "sc"; }
};

// Uniform access to an entity's modalities: the stored feature matrices plus
// the implicit "interactions" modality derived from the train split. The
// interactions profile counts as available only when non-empty.
class ModalityAccess {
 public:
  ModalityAccess() = default;
  ModalityAccess(const Dataset& d, const TrainView& tv, const std::string& entity,
                 std::vector<std::string> names);

  int count() const { return static_cast<int>(names_.size()); }
  const std::string& name(int k) const { return names_[static_cast<size_t>(k)]; }
  const std::vector<std::string>& names() const { return names_; }
  size_t dim(int k) const { return dims_[static_cast<size_t>(k)]; }
  bool is_interactions(int k) const { return stores_[static_cast<size_t>(k)] == nullptr; }
  size_t entity_count() const { return entity_count_; }
  int index_of(const std::string& name) const;

  bool available(int k, int entity_idx) const;
  std::vector<int> pool(int entity_idx) const;

  template <typename T>
  void fill_row(int k, int entity_idx, T* out) const {
    const ModalityStore* s = stores_[static_cast<size_t>(k)];
    if (s) {
      const float* row = s->matrix.row_ptr(static_cast<size_t>(entity_idx));
      for (size_t j = 0; j < s->dim; ++j) out[j] = static_cast<T>(row[j]);
    } else {
      size_t d = dims_[static_cast<size_t>(k)];
      std::fill_n(out, d, T(0));
      for (int other : (*profiles_)[static_cast<size_t>(entity_idx)]) out[static_cast<size_t>(other)] = T(1);
    }
  }

  template <typename T>
  TensorT<T> gather(int k, std::span<const int> entities) const {
    TensorT<T> out({entities.size(), dim(k)});
    for (size_t r = 0; r < entities.size(); ++r) fill_row(k, entities[r], out.row_ptr(r));
    return out;
  }

  // Default modality list for an entity side: stored modalities in manifest
  // order, then "interactions".
  static std::vector<std::string> default_names(const Dataset& d, const std::string& entity);

 private:
  std::vector<std::string> names_;
  std::vector<size_t> dims_;
  std::vector<const ModalityStore*> stores_;  // null for interactions
  const std::vector<std::vector<int>>* profiles_ = nullptr;  // train profiles of this entity
  size_t entity_count_ = 0;
};

// Linear -> [batchnorm] -> ReLU per hidden layer, then a final linear
// (optionally followed by ReLU). Dropout after each hidden activation.
// A linear feeding a batchnorm carries no bias: the normalization would cancel
// it exactly and its gradient would be identically zero.
template <typename T>
struct DenseStackT {
  std::vector<ParameterT<T>> ws;
  std::vector<std::unique_ptr<ParameterT<T>>> bs;  // null where batchnorm follows
  std::vector<BatchNormStateT<T>> bns;
  bool use_bn = false;
  bool out_relu = false;
  T dropout = T(0);

  void init(const std::string& prefix, size_t in_dim, const std::vector<int>& hidden, size_t out_dim,
            bool bn, bool out_relu_, double dropout_, uint64_t seed) {
    use_bn = bn;
    out_relu = out_relu_;
    dropout = static_cast<T>(dropout_);
    std::vector<size_t> dims{in_dim};
    for (int h : hidden) {
      if (h < 1) throw ValidationError("layer sizes must be positive in " + prefix);
      dims.push_back(static_cast<size_t>(h));
    }
    dims.push_back(out_dim);
    for (size_t l = 0; l + 1 < dims.size(); ++l) {
      std::string wname = prefix + ".w" + std::to_string(l);
      TensorT<T> w({dims[l + 1], dims[l]});
      SeededRng rng(seed, "init." + wname);
      double bound = std::sqrt(6.0 / static_cast<double>(dims[l] + dims[l + 1]));
      for (T& v : w.data) v = static_cast<T>((rng.next_double() * 2.0 - 1.0) * bound);
      ws.emplace_back(wname, std::move(w));
      bool bn_here = use_bn && l + 2 < dims.size();
      if (bn_here) {
        bs.push_back(nullptr);
        bns.emplace_back(prefix + ".bn" + std::to_string(l), dims[l + 1]);
      } else {
        bs.push_back(std::make_unique<ParameterT<T>>(prefix + ".b" + std::to_string(l),
                                                     TensorT<T>({dims[l + 1]})));
      }
    }
  }

  typename GraphT<T>::Var forward(GraphT<T>& g, typename GraphT<T>::Var x, bool train,
                                  SeededRng* drop_rng) {
    using Var = typename GraphT<T>::Var;
    Var h = x;
    size_t bn_idx = 0;
    for (size_t l = 0; l < ws.size(); ++l) {
      h = g.linear(h, ws[l], bs[l].get());
      bool is_hidden = l + 1 < ws.size();
      if (is_hidden) {
        if (use_bn) h = g.batchnorm(h, bns[bn_idx++], train);
        h = g.relu(h);
        if (dropout > T(0)) h = g.dropout(h, dropout, drop_rng, train);
      } else if (out_relu) {
        h = g.relu(h);
      }
    }
    return h;
  }

  void collect_params(std::vector<ParameterT<T>*>& out) {
    for (auto& w : ws) out.push_back(&w);
    for (auto& b : bs)
      if (b) out.push_back(b.get());
    for (auto& bn : bns) {
      out.push_back(&bn.gamma);
      out.push_back(&bn.beta);
    }
  }

  void collect_tensors(std::vector<std::pair<std::string, TensorT<T>*>>& out) {
    for (auto& w : ws) out.emplace_back(w.name, &w.value);
    for (auto& b : bs)
      if (b) out.emplace_back(b->name, &b->value);
    for (auto& bn : bns) {
      out.emplace_back(bn.gamma.name, &bn.gamma.value);
      out.emplace_back(bn.beta.name, &bn.beta.value);
      out.emplace_back(bn.gamma.name.substr(0, bn.gamma.name.size() - 6) + ".running_mean", &bn.running_mean);
      out.emplace_back(bn.gamma.name.substr(0, bn.gamma.name.size() - 6) + ".running_var", &bn.running_var);
    }
  }
};

// One training batch with every stochastic choice already made, so the loss is
// a deterministic function of the parameters (the finite-difference checks
// rely on this).
struct BatchPlan {
  std::vector<int> users;
  std::vector<int> pos_items;
  std::vector<int> neg_items;  // size B * n_neg
  int n_neg = 0;
  int item_n_mod = 1;                          // 0 = model fuses each item's full pool (mubrar vanilla)
  std::vector<std::array<int, 2>> item_mods;   // per pair; [1] = -1 when item_n_mod < 2
  std::vector<std::array<int, 2>> neg_mods;    // per negative occurrence
  int user_n_mod = 1;                          // 0 = full pool
  std::vector<std::array<int, 2>> user_mods;   // per pair (user-side models)
};

// Samples negatives and modalities for one batch. `item_access` / `user_access`
// may be null when the model has no encoder on that side. Negatives inherit the
// positive pair's sampled modalities (falling back to a uniformly sampled
// available one when an inherited modality is missing for that item).
BatchPlan make_batch_plan(std::span<const std::pair<int, int>> batch, const TrainView& tv,
                          const ModalityAccess* item_access, const ModalityAccess* user_access,
                          const ModelConfig& cfg, SeededRng& neg_rng, SeededRng& mod_rng);

// Symmetric InfoNCE over a batch of positive pairs: both directed terms, each
// row's candidates being the positive pair plus that pair's sampled negatives.
template <typename T>
typename GraphT<T>::Var symmetric_infonce(GraphT<T>& g, typename GraphT<T>::Var pos_m1,
                                          typename GraphT<T>::Var pos_m2,
                                          typename GraphT<T>::Var neg_m1,
                                          typename GraphT<T>::Var neg_m2, T tau) {
  std::vector<int> zeros(g.value(pos_m1).rows(), 0);
  auto l12 = g.softmax_xent(g.pair_scores(pos_m1, pos_m2, neg_m2), tau, zeros);
  auto l21 = g.softmax_xent(g.pair_scores(pos_m2, pos_m1, neg_m1), tau, zeros);
  return g.add(l12, l21);
}

template <typename T>
class RecModelT {
 public:
  explicit RecModelT(ModelConfig cfg) : cfg_(std::move(cfg)) {}
  virtual ~RecModelT() = default;

  const ModelConfig& config() const { return cfg_; }
  virtual bool trainable() const { return true; }
  virtual std::vector<ParameterT<T>*> parameters() { return {}; }
  // All tensors that belong in a checkpoint, in a fixed order.
  virtual std::vector<std::pair<std::string, TensorT<T>*>> named_tensors() { return {}; }

  void set_train(bool t) { train_mode_ = t; }
  bool training() const { return train_mode_; }

  virtual typename GraphT<T>::Var batch_loss(GraphT<T>& g, const BatchPlan& plan) {
    (void)g;
    (void)plan;
    throw ValidationError("model kind '" + cfg_.kind + "' is not trainable");
  }

  // Modalities the ranking side varies over during evaluation (item side for
  // item/both models, user side for user-side models). Empty for mf/deepmf/pop/rand.
  virtual const std::vector<std::string>& eval_modalities() const {
    static const std::vector<std::string> none;
    return none;
  }

  // Modality accessors the batch planner samples from; null when that side has
  // no modality encoders.
  virtual const ModalityAccess* plan_item_access() const { return nullptr; }
  virtual const ModalityAccess* plan_user_access() const { return nullptr; }

  // Prepares the scoring caches for one modality subset (ids into
  // eval_modalities; empty = all). Must be called in eval mode before
  // score_user; score_user is then const and safe to call from many threads.
  virtual void begin_scoring(const std::vector<int>& subset) = 0;
  virtual void score_user(int user, std::span<T> out) const = 0;

  // Eval-mode item embeddings over a modality subset with per-item
  // availability handling; valid[r] = false when the effective subset is empty.
  virtual TensorT<T> embed_items(std::span<const int> items, const std::vector<int>& subset,
                                 std::vector<uint8_t>* valid) {
    (void)items;
    (void)subset;
    (void)valid;
    throw ValidationError("model kind '" + cfg_.kind + "' has no modality-based item embeddings");
  }

  // Eval-mode embeddings of one modality for the gap analysis.
  virtual TensorT<T> modality_embeddings(int mod_id, std::span<const int> entities) {
    (void)mod_id;
    (void)entities;
    throw ValidationError("model kind '" + cfg_.kind + "' has no modality encoders");
  }

 protected:
  ModelConfig cfg_;
  bool train_mode_ = true;
};

using RecModel = RecModelT<float>;

template <typename T>
std::unique_ptr<RecModelT<T>> make_model(const ModelConfig& cfg, const Dataset& d, const TrainView& tv);

void validate_model_config(const ModelConfig& cfg, const Dataset& d);

// ---------------------------------------------------------------------------
// implementation
// ---------------------------------------------------------------------------

inline nlohmann::json ModelConfig::to_json() const {
  nlohmann::json j;
  j["kind"] = kind;
  j["variant"] = variant;
  j["side"] = side;
  j["shared_dim"] = shared_dim;
  j["g_layers"] = g_layers;
  j["branch_layers"] = branch_layers;
  j["embedding_dim"] = embedding_dim;
  j["batchnorm"] = batchnorm;
  j["dropout"] = dropout;
  j["loss"] = {{"alpha", loss.alpha}, {"beta", loss.beta}, {"tau", loss.tau}, {"n_neg", loss.n_neg}};
  j["train_modalities"] = train_modalities;
  j["user_train_modalities"] = user_train_modalities;
  j["user_embedder"] = user_embedder;
  j["item_embedder"] = item_embedder;
  j["tower_layers"] = tower_layers;
  j["tower_relu_input"] = tower_relu_input;
  j["tower_relu_output"] = tower_relu_output;
  j["min_score"] = min_score;
  j["init_seed"] = init_seed;
  return j;
}

inline ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.kind = j.value("kind", c.kind);
  c.variant = j.value("variant", c.variant);
  c.side = j.value("side", c.side);
  c.shared_dim = j.value("shared_dim", c.shared_dim);
  c.g_layers = j.value("g_layers", c.g_layers);
  c.branch_layers = j.value("branch_layers", c.branch_layers);
  c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
  c.batchnorm = j.value("batchnorm", c.batchnorm);
  c.dropout = j.value("dropout", c.dropout);
  if (j.contains("loss")) {
    const auto& jl = j.at("loss");
    c.loss.alpha = jl.value("alpha", c.loss.alpha);
    c.loss.beta = jl.value("beta", c.loss.beta);
    c.loss.tau = jl.value("tau", c.loss.tau);
    c.loss.n_neg = jl.value("n_neg", c.loss.n_neg);
  }
  c.train_modalities = j.value("train_modalities", c.train_modalities);
  c.user_train_modalities = j.value("user_train_modalities", c.user_train_modalities);
  c.user_embedder = j.value("user_embedder", c.user_embedder);
  c.item_embedder = j.value("item_embedder", c.item_embedder);
  c.tower_layers = j.value("tower_layers", c.tower_layers);
  c.tower_relu_input = j.value("tower_relu_input", c.tower_relu_input);
  c.tower_relu_output = j.value("tower_relu_output", c.tower_relu_output);
  c.min_score = j.value("min_score", c.min_score);
  c.init_seed = j.value("init_seed", c.init_seed);
  return c;
}

inline std::string ModelConfig::resolved_variant() const {
  if (kind == "sibrar") {
    if (!variant.empty()) return variant;
    return loss.alpha > 0 || (side == "both" && loss.beta > 0) ? "sc" : "s";
  }
  if (kind == "mubrar") return variant.empty() ? "vanilla" : variant;
  return "";
}

inline ModalityAccess::ModalityAccess(const Dataset& d, const TrainView& tv, const std::string& entity,
                                      std::vector<std::string> names)
    : names_(std::move(names)) {
  bool item_side = (entity == "item");
  const auto& stores = item_side ? d.item_modalities : d.user_modalities;
  entity_count_ = item_side ? d.n_items : d.n_users;
  profiles_ = item_side ? &tv.item_pos : &tv.user_pos;
  size_t profile_dim = item_side ? d.n_users : d.n_items;
  for (const std::string& n : names_) {
    if (n == kInteractionsModality) {
      stores_.push_back(nullptr);
      dims_.push_back(profile_dim);
      continue;
    }
    const ModalityStore* found = nullptr;
    for (const auto& s : stores)
      if (s.name == n) found = &s;
    if (!found) throw ValidationError("modality '" + n + "' not found for entity " + entity);
    stores_.push_back(found);
    dims_.push_back(found->dim);
  }
}

inline int ModalityAccess::index_of(const std::string& name) const {
  for (size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return static_cast<int>(i);
  return -1;
}

inline bool ModalityAccess::available(int k, int entity_idx) const {
  const ModalityStore* s = stores_[static_cast<size_t>(k)];
  if (s) return s->available[static_cast<size_t>(entity_idx)] != 0;
  return !(*profiles_)[static_cast<size_t>(entity_idx)].empty();
}

inline std::vector<int> ModalityAccess::pool(int entity_idx) const {
  std::vector<int> p;
  for (int k = 0; k < count(); ++k)
    if (available(k, entity_idx)) p.push_back(k);
  return p;
}

inline std::vector<std::string> ModalityAccess::default_names(const Dataset& d, const std::string& entity) {
  std::vector<std::string> names;
  for (const auto& s : (entity == "item" ? d.item_modalities : d.user_modalities)) names.push_back(s.name);
  names.push_back(kInteractionsModality);
  return names;
}

inline BatchPlan make_batch_plan(std::span<const std::pair<int, int>> batch, const TrainView& tv,
                                 const ModalityAccess* item_access, const ModalityAccess* user_access,
                                 const ModelConfig& cfg, SeededRng& neg_rng, SeededRng& mod_rng) {
  BatchPlan plan;
  plan.n_neg = cfg.loss.n_neg;
  std::string variant = cfg.resolved_variant();
  bool contrastive = cfg.contrastive();
  plan.item_n_mod = variant == "vanilla" ? 0 : (contrastive ? 2 : 1);
  plan.user_n_mod = plan.item_n_mod;
  for (auto [u, i] : batch) {
    plan.users.push_back(u);
    plan.pos_items.push_back(i);
    std::vector<int> negs = sample_negatives(u, plan.n_neg, tv, neg_rng);
    plan.neg_items.insert(plan.neg_items.end(), negs.begin(), negs.end());
    if (item_access && plan.item_n_mod > 0) {
      std::vector<int> mods = sample_modalities(item_access->pool(i), plan.item_n_mod, mod_rng);
      plan.item_mods.push_back({mods[0], plan.item_n_mod > 1 ? mods[1] : -1});
      for (int n : negs) {
        std::array<int, 2> nm = plan.item_mods.back();
        for (int s = 0; s < plan.item_n_mod; ++s) {
          if (!item_access->available(nm[static_cast<size_t>(s)], n)) {
            std::vector<int> fallback = item_access->pool(n);
            if (fallback.empty())
              throw ValidationError("negative item " + std::to_string(n) + " has no available modalities");
            nm[static_cast<size_t>(s)] =
                fallback[static_cast<size_t>(mod_rng.uniform(fallback.size()))];
          }
        }
        plan.neg_mods.push_back(nm);
      }
    }
    if (user_access && plan.user_n_mod > 0) {
      std::vector<int> mods = sample_modalities(user_access->pool(u), plan.user_n_mod, mod_rng);
      plan.user_mods.push_back({mods[0], plan.user_n_mod > 1 ? mods[1] : -1});
    }
  }
  return plan;
}

// ---- shared pieces for the encoder-based models ----

namespace detail {

// Embeds a list of (entity, modality) requests through per-modality adapters
// and an optional shared trunk, in one forward pass (a single batchnorm batch).
// Returns the Var of the stacked output plus, via `positions`, the output row
// of each request.
template <typename T>
struct EncodeBatch {
  std::vector<int> entities;  // request entity per row
  std::vector<int> mods;      // request modality per row
  int add(int entity, int mod) {
    entities.push_back(entity);
    mods.push_back(mod);
    return static_cast<int>(entities.size()) - 1;
  }
  size_t size() const { return entities.size(); }
};

template <typename T, typename AdapterFn>
typename GraphT<T>::Var encode_grouped(GraphT<T>& g, const EncodeBatch<T>& req,
                                       const ModalityAccess& access, AdapterFn&& per_modality,
                                       std::vector<int>* positions) {
  using Var = typename GraphT<T>::Var;
  std::vector<Var> parts;
  std::vector<int> pos(req.size());
  int out_row = 0;
  for (int m = 0; m < access.count(); ++m) {
    std::vector<int> rows;
    for (size_t r = 0; r < req.size(); ++r)
      if (req.mods[r] == m) rows.push_back(static_cast<int>(r));
    if (rows.empty()) continue;
    TensorT<T> x({rows.size(), access.dim(m)});
    for (size_t r = 0; r < rows.size(); ++r)
      access.fill_row(m, req.entities[static_cast<size_t>(rows[r])], x.row_ptr(r));
    Var encoded = per_modality(m, g.input(std::move(x)));
    parts.push_back(encoded);
    for (int r : rows) pos[static_cast<size_t>(r)] = out_row++;
  }
  if (positions) *positions = std::move(pos);
  if (parts.size() == 1) return parts[0];
  return g.concat_rows(parts);
}

}  // namespace detail

// ---- SiBraR ----

// Single-branch recommender: per-modality one-layer adapters f_k feed a shared
// encoder g; the counterpart entity comes from a lookup table or a profile
// encoder h. Weight sharing in g is structural: the same parameter objects
// serve every modality.
template <typename T>
class SiBraRT : public RecModelT<T> {
 public:
  SiBraRT(const ModelConfig& cfg, const Dataset& d, const TrainView& tv)
      : RecModelT<T>(cfg), data_(&d), tv_(&tv) {
    const ModelConfig& c = this->cfg_;
    side_item_ = c.side == "item" || c.side == "both";
    side_user_ = c.side == "user" || c.side == "both";
    if (side_item_) {
      item_access_ = ModalityAccess(d, tv, "item",
                                    c.train_modalities.empty()
                                        ? ModalityAccess::default_names(d, "item")
                                        : c.train_modalities);
      init_branch("item", item_access_, item_adapters_, g_item_);
    }
    if (side_user_) {
      user_access_ = ModalityAccess(d, tv, "user",
                                    c.user_train_modalities.empty()
                                        ? ModalityAccess::default_names(d, "user")
                                        : c.user_train_modalities);
      init_branch("user", user_access_, user_adapters_, g_user_);
    }
    size_t emb = static_cast<size_t>(c.embedding_dim);
    if (!side_user_) {
      // h embeds users
      if (c.user_embedder == "lookup") {
        user_table_ = make_table("h.user_table", d.n_users, emb);
      } else {
        user_tower_.emplace();
        user_tower_->init("h.user_tower", d.n_items, c.tower_layers, emb, false, c.tower_relu_output,
                          c.dropout, c.init_seed);
      }
    }
    if (!side_item_) {
      if (c.item_embedder == "lookup") {
        item_table_ = make_table("h.item_table", d.n_items, emb);
      } else {
        item_tower_.emplace();
        item_tower_->init("h.item_tower", d.n_users, c.tower_layers, emb, false, c.tower_relu_output,
                          c.dropout, c.init_seed);
      }
    }
  }

  std::vector<ParameterT<T>*> parameters() override {
    std::vector<ParameterT<T>*> out;
    for (auto& a : item_adapters_)
      if (a) a->collect_params(out);
    if (side_item_) g_item_.collect_params(out);
    for (auto& a : user_adapters_)
      if (a) a->collect_params(out);
    if (side_user_) g_user_.collect_params(out);
    if (user_table_) out.push_back(&*user_table_);
    if (user_tower_) user_tower_->collect_params(out);
    if (item_table_) out.push_back(&*item_table_);
    if (item_tower_) item_tower_->collect_params(out);
    return out;
  }

  std::vector<std::pair<std::string, TensorT<T>*>> named_tensors() override {
    std::vector<std::pair<std::string, TensorT<T>*>> out;
    for (auto& a : item_adapters_)
      if (a) a->collect_tensors(out);
    if (side_item_) g_item_.collect_tensors(out);
    for (auto& a : user_adapters_)
      if (a) a->collect_tensors(out);
    if (side_user_) g_user_.collect_tensors(out);
    if (user_table_) out.emplace_back(user_table_->name, &user_table_->value);
    if (user_tower_) user_tower_->collect_tensors(out);
    if (item_table_) out.emplace_back(item_table_->name, &item_table_->value);
    if (item_tower_) item_tower_->collect_tensors(out);
    return out;
  }

  const std::vector<std::string>& eval_modalities() const override {
    return side_item_ ? item_access_.names() : user_access_.names();
  }

  typename GraphT<T>::Var batch_loss(GraphT<T>& g, const BatchPlan& plan) override {
    using Var = typename GraphT<T>::Var;
    if (!this->train_mode_) throw ValidationError("batch_loss requires train mode");
    const ModelConfig& c = this->cfg_;
    size_t B = plan.users.size();

    Var e_user, e_pos, e_neg;
    std::array<Var, 2> u_slots{-1, -1}, p_slots{-1, -1};
    std::array<Var, 2> n_slots{-1, -1};

    if (side_item_) {
      embed_side(g, plan.pos_items, plan.neg_items, plan.item_mods, plan.neg_mods, plan.item_n_mod,
                 item_access_, item_adapters_, g_item_, e_pos, e_neg, p_slots, n_slots);
    } else {
      e_pos = counterpart_rows(g, plan.pos_items, false);
      e_neg = counterpart_rows(g, plan.neg_items, false);
    }
    if (side_user_) {
      // users have no sampled negatives; only the positive-side embeddings
      std::vector<int> no_negs;
      std::vector<std::array<int, 2>> no_neg_mods;
      Var unused_neg = -1;
      std::array<Var, 2> unused_slots{-1, -1};
      embed_side(g, plan.users, no_negs, plan.user_mods, no_neg_mods, plan.user_n_mod, user_access_,
                 user_adapters_, g_user_, e_user, unused_neg, u_slots, unused_slots);
    } else {
      e_user = counterpart_rows(g, plan.users, true);
    }

    Var scores = g.pair_scores(e_user, e_pos, e_neg);
    Var loss = g.bpr_from_scores(scores);

    if (c.contrastive()) {
      if (side_item_ && c.loss.alpha > 0) {
        Var contr = symmetric_infonce(g, p_slots[0], p_slots[1], n_slots[0], n_slots[1],
                                      static_cast<T>(c.loss.tau));
        loss = g.add(loss, g.scale(contr, static_cast<T>(c.loss.alpha)));
      }
      if (side_user_) {
        double w = c.side == "both" ? c.loss.beta : c.loss.alpha;
        if (w > 0) {
          // In-batch denominators: each user's two modality embeddings are the
          // positive pair, the other users in the batch act as negatives.
          std::vector<int> diag(B);
          for (size_t b = 0; b < B; ++b) diag[b] = static_cast<int>(b);
          Var l12 = g.softmax_xent(g.matmul_nt(u_slots[0], u_slots[1]), static_cast<T>(c.loss.tau), diag);
          Var l21 = g.softmax_xent(g.matmul_nt(u_slots[1], u_slots[0]), static_cast<T>(c.loss.tau), diag);
          loss = g.add(loss, g.scale(g.add(l12, l21), static_cast<T>(w)));
        }
      }
    }
    return loss;
  }

  // The subset indexes eval_modalities(): item modalities when the model has
  // an item branch (side=item/both), user modalities otherwise.
  void begin_scoring(const std::vector<int>& subset) override {
    if (this->train_mode_) throw ValidationError("begin_scoring requires eval mode");
    std::vector<int> all_items(data_->n_items), all_users(data_->n_users);
    for (size_t i = 0; i < data_->n_items; ++i) all_items[i] = static_cast<int>(i);
    for (size_t u = 0; u < data_->n_users; ++u) all_users[u] = static_cast<int>(u);
    if (side_item_) {
      cached_items_ = embed_items(all_items, subset, &item_valid_);
    } else {
      GraphT<T> g;
      cached_items_ = g.value(counterpart_rows(g, all_items, false));
      item_valid_.assign(data_->n_items, 1);
    }
    if (side_user_) {
      std::vector<int> usub = side_item_ ? std::vector<int>{} : subset;
      std::vector<uint8_t> uvalid;
      cached_users_ =
          embed_entities_subset(all_users, usub, user_access_, user_adapters_, g_user_, &uvalid);
      user_valid_ = std::move(uvalid);
    } else {
      GraphT<T> g;
      cached_users_ = g.value(counterpart_rows(g, all_users, true));
      user_valid_.assign(data_->n_users, 1);
    }
  }

  void score_user(int user, std::span<T> out) const override {
    score_dot(cached_users_, user_valid_, cached_items_, item_valid_, user, out);
  }

  TensorT<T> embed_items(std::span<const int> items, const std::vector<int>& subset,
                         std::vector<uint8_t>* valid) override {
    if (!side_item_) throw ValidationError("this model has no item modality encoders");
    return embed_entities_subset(items, subset, item_access_, item_adapters_, g_item_, valid);
  }

  TensorT<T> modality_embeddings(int mod_id, std::span<const int> entities) override {
    auto& access = side_item_ ? item_access_ : user_access_;
    auto& adapters = side_item_ ? item_adapters_ : user_adapters_;
    auto& trunk = side_item_ ? g_item_ : g_user_;
    std::vector<uint8_t> valid;
    TensorT<T> e = embed_entities_subset(entities, {mod_id}, access, adapters, trunk, &valid);
    for (uint8_t v : valid)
      if (!v) throw ValidationError("modality_embeddings: modality unavailable for a requested entity");
    return e;
  }

  // Training-time embedding over an explicit modality list (tests).
  TensorT<T> embed_item_with_mods(int item, const std::vector<int>& mods) {
    for (int m : mods)
      if (!item_access_.available(m, item))
        throw ValidationError("embed_item_with_mods: modality unavailable for item");
    GraphT<T> g;
    detail::EncodeBatch<T> req;
    for (int m : mods) req.add(item, m);
    std::vector<int> pos;
    auto adapter = [&](int m, typename GraphT<T>::Var x) {
      return encode_modality(g, m, x, item_adapters_);
    };
    typename GraphT<T>::Var adapted = detail::encode_grouped(g, req, item_access_, adapter, &pos);
    typename GraphT<T>::Var enc = g_item_.forward(g, adapted, this->train_mode_, dropout_rng());
    std::vector<typename GraphT<T>::Var> rows;
    for (int p : pos) rows.push_back(g.take_rows(enc, {p}));
    return g.value(g.mean_of(rows));
  }

  const ModalityAccess& item_access() const { return item_access_; }
  const ModalityAccess& user_access() const { return user_access_; }
  DenseStackT<T>& g_trunk() { return side_item_ ? g_item_ : g_user_; }
  const ModalityAccess* plan_item_access() const override { return side_item_ ? &item_access_ : nullptr; }
  const ModalityAccess* plan_user_access() const override { return side_user_ ? &user_access_ : nullptr; }

 private:
  ParameterT<T> make_table(const std::string& name, size_t n, size_t dim) {
    TensorT<T> t({n, dim});
    SeededRng rng(this->cfg_.init_seed, "init." + name);
    for (T& v : t.data) v = static_cast<T>(rng.normal() * 0.1);
    return ParameterT<T>(name, std::move(t));
  }

  void init_branch(const std::string& side, const ModalityAccess& access,
                   std::vector<std::optional<DenseStackT<T>>>& adapters, DenseStackT<T>& trunk) {
    const ModelConfig& c = this->cfg_;
    size_t shared = static_cast<size_t>(c.shared_dim);
    adapters.resize(static_cast<size_t>(access.count()));
    for (int m = 0; m < access.count(); ++m) {
      // A modality already shaped like g's input skips its adapter.
      if (access.dim(m) == shared) continue;
      adapters[static_cast<size_t>(m)].emplace();
      adapters[static_cast<size_t>(m)]->init("f." + side + "." + access.name(m), access.dim(m), {}, shared,
                                             false, true, 0.0, c.init_seed);
    }
    trunk.init("g." + side, shared, c.g_layers, static_cast<size_t>(c.embedding_dim), c.batchnorm, false,
               c.dropout, c.init_seed);
  }

  typename GraphT<T>::Var encode_modality(GraphT<T>& g, int mod, typename GraphT<T>::Var x,
                                          std::vector<std::optional<DenseStackT<T>>>& adapters) {
    // Adapter output feeds the shared trunk later via concat; here only the
    // adapter applies (the trunk runs once over the concatenated rows).
    auto& ad = adapters[static_cast<size_t>(mod)];
    if (!ad) return x;
    return ad->forward(g, x, this->train_mode_, dropout_rng());
  }

  SeededRng* dropout_rng() {
    if (this->cfg_.dropout <= 0) return nullptr;
    if (!drop_rng_) drop_rng_ = std::make_unique<SeededRng>(this->cfg_.init_seed, "dropout");
    return drop_rng_.get();
  }

  // Shared embed path for one side of a batch: positives + negatives under the
  // plan's sampled modalities.
  void embed_side(GraphT<T>& g, const std::vector<int>& pos, const std::vector<int>& negs,
                  const std::vector<std::array<int, 2>>& pos_mods,
                  const std::vector<std::array<int, 2>>& neg_mods, int n_mod, ModalityAccess& access,
                  std::vector<std::optional<DenseStackT<T>>>& adapters, DenseStackT<T>& trunk,
                  typename GraphT<T>::Var& e_pos, typename GraphT<T>::Var& e_neg,
                  std::array<typename GraphT<T>::Var, 2>& pos_slots,
                  std::array<typename GraphT<T>::Var, 2>& neg_slots) {
    using Var = typename GraphT<T>::Var;
    if (n_mod < 1 || n_mod > 2) throw ValidationError("sibrar: n_mod must be 1 or 2");
    detail::EncodeBatch<T> req;
    std::vector<std::array<int, 2>> pos_req(pos.size()), neg_req(negs.size());
    for (size_t b = 0; b < pos.size(); ++b)
      for (int s = 0; s < n_mod; ++s) pos_req[b][static_cast<size_t>(s)] = req.add(pos[b], pos_mods[b][static_cast<size_t>(s)]);
    for (size_t n = 0; n < negs.size(); ++n)
      for (int s = 0; s < n_mod; ++s) neg_req[n][static_cast<size_t>(s)] = req.add(negs[n], neg_mods[n][static_cast<size_t>(s)]);

    std::vector<int> where;
    auto adapter = [&](int m, Var x) { return encode_modality(g, m, x, adapters); };
    Var adapted = detail::encode_grouped(g, req, access, adapter, &where);
    Var encoded = trunk.forward(g, adapted, this->train_mode_, dropout_rng());

    auto slot_rows = [&](const std::vector<std::array<int, 2>>& reqs, int s) {
      std::vector<int> rows(reqs.size());
      for (size_t r = 0; r < reqs.size(); ++r) rows[r] = where[static_cast<size_t>(reqs[r][static_cast<size_t>(s)])];
      return rows;
    };
    for (int s = 0; s < n_mod; ++s) {
      pos_slots[static_cast<size_t>(s)] = g.take_rows(encoded, slot_rows(pos_req, s));
      if (!negs.empty()) neg_slots[static_cast<size_t>(s)] = g.take_rows(encoded, slot_rows(neg_req, s));
    }
    e_pos = n_mod == 1 ? pos_slots[0] : g.mean_of({pos_slots[0], pos_slots[1]});
    if (!negs.empty()) e_neg = n_mod == 1 ? neg_slots[0] : g.mean_of({neg_slots[0], neg_slots[1]});
  }

  // Inference aggregation: mean over the effective subset per entity, grouped
  // so the whole call is one forward pass.
  TensorT<T> embed_entities_subset(std::span<const int> entities, const std::vector<int>& subset,
                                   ModalityAccess& access,
                                   std::vector<std::optional<DenseStackT<T>>>& adapters,
                                   DenseStackT<T>& trunk, std::vector<uint8_t>* valid) {
    using Var = typename GraphT<T>::Var;
    std::vector<int> use = subset;
    if (use.empty())
      for (int m = 0; m < access.count(); ++m) use.push_back(m);
    for (int m : use)
      if (m < 0 || m >= access.count()) throw ValidationError("modality subset id out of range");

    GraphT<T> g;
    detail::EncodeBatch<T> req;
    std::vector<std::vector<int>> groups(entities.size());
    for (size_t r = 0; r < entities.size(); ++r)
      for (int m : use)
        if (access.available(m, entities[r])) groups[r].push_back(req.add(entities[r], m));
    std::vector<uint8_t> ok(entities.size(), 1);
    for (size_t r = 0; r < entities.size(); ++r)
      if (groups[r].empty()) ok[r] = 0;

    TensorT<T> out({entities.size(), static_cast<size_t>(this->cfg_.embedding_dim)});
    if (req.size() > 0) {
      std::vector<int> where;
      auto adapter = [&](int m, Var x) { return encode_modality(g, m, x, adapters); };
      Var adapted = detail::encode_grouped(g, req, access, adapter, &where);
      Var encoded = trunk.forward(g, adapted, /*train=*/false, nullptr);
      const TensorT<T>& enc = g.value(encoded);
      size_t d = enc.cols();
      for (size_t r = 0; r < entities.size(); ++r) {
        if (!ok[r]) continue;
        for (int ri : groups[r]) {
          const T* src = enc.row_ptr(static_cast<size_t>(where[static_cast<size_t>(ri)]));
          T* dst = out.row_ptr(r);
          for (size_t j = 0; j < d; ++j) dst[j] += src[j];
        }
        T inv = T(1) / static_cast<T>(groups[r].size());
        T* dst = out.row_ptr(r);
        for (size_t j = 0; j < d; ++j) dst[j] *= inv;
      }
    }
    if (valid) *valid = std::move(ok);
    return out;
  }

  typename GraphT<T>::Var counterpart_rows(GraphT<T>& g, const std::vector<int>& entities, bool users) {
    if (users) {
      if (user_table_) return g.rows(*user_table_, entities);
      ModalityAccess prof(*data_, *tv_, "user", {kInteractionsModality});
      return user_tower_->forward(g, g.input(prof.template gather<T>(0, entities)), this->train_mode_,
                                  dropout_rng());
    }
    if (item_table_) return g.rows(*item_table_, entities);
    ModalityAccess prof(*data_, *tv_, "item", {kInteractionsModality});
    return item_tower_->forward(g, g.input(prof.template gather<T>(0, entities)), this->train_mode_,
                                dropout_rng());
  }

  static void score_dot(const TensorT<T>& users, const std::vector<uint8_t>& uvalid,
                        const TensorT<T>& items, const std::vector<uint8_t>& ivalid, int user,
                        std::span<T> out) {
    size_t n = items.rows(), d = items.cols();
    if (out.size() != n) throw ValidationError("score_user: output span size mismatch");
    if (!uvalid[static_cast<size_t>(user)]) {
      for (size_t i = 0; i < n; ++i) out[i] = -std::numeric_limits<T>::infinity();
      return;
    }
    kernels::matmul_nt(items.data.data(), users.row_ptr(static_cast<size_t>(user)), out.data(), n, 1, d);
    for (size_t i = 0; i < n; ++i)
      if (!ivalid[i]) out[i] = -std::numeric_limits<T>::infinity();
  }

  const Dataset* data_;
  const TrainView* tv_;
  bool side_item_ = false, side_user_ = false;
  ModalityAccess item_access_, user_access_;
  std::vector<std::optional<DenseStackT<T>>> item_adapters_, user_adapters_;
  DenseStackT<T> g_item_, g_user_;
  std::optional<ParameterT<T>> user_table_, item_table_;
  std::optional<DenseStackT<T>> user_tower_, item_tower_;
  std::unique_ptr<SeededRng> drop_rng_;
  TensorT<T> cached_items_, cached_users_;
  std::vector<uint8_t> item_valid_, user_valid_;
};

}  // namespace mmrec

#include "mmrec/models_impl.hpp"

#endif
