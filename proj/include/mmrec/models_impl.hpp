#ifndef MMREC_MODELS_IMPL_HPP
#define MMREC_MODELS_IMPL_HPP

// Second half of the model zoo: multi-branch network, the collaborative
// baselines and the factory. Included from models.hpp only.

#include <limits>

namespace mmrec {

// Multi-branch recommender: an independent multi-layer encoder per modality,
// fused by averaging. Variants: vanilla (no sampling), S (one sampled modality
// per pair), SC (two sampled modalities plus the contrastive term).
template <typename T>
class MuBraRT : public RecModelT<T> {
 public:
  MuBraRT(const ModelConfig& cfg, const Dataset& d, const TrainView& tv)
      : RecModelT<T>(cfg), data_(&d), tv_(&tv) {
    const ModelConfig& c = this->cfg_;
    access_ = ModalityAccess(d, tv, "item",
                             c.train_modalities.empty() ? ModalityAccess::default_names(d, "item")
                                                        : c.train_modalities);
    branches_.resize(static_cast<size_t>(access_.count()));
    for (int m = 0; m < access_.count(); ++m)
      branches_[static_cast<size_t>(m)].init("f." + access_.name(m), access_.dim(m), c.branch_layers,
                                             static_cast<size_t>(c.embedding_dim), c.batchnorm, false,
                                             c.dropout, c.init_seed);
    size_t emb = static_cast<size_t>(c.embedding_dim);
    if (c.user_embedder == "lookup") {
      TensorT<T> t({d.n_users, emb});
      SeededRng rng(c.init_seed, "init.h.user_table");
      for (T& v : t.data) v = static_cast<T>(rng.normal() * 0.1);
      user_table_.emplace("h.user_table", std::move(t));
    } else {
      user_tower_.emplace();
      user_tower_->init("h.user_tower", d.n_items, c.tower_layers, emb, false, c.tower_relu_output,
                        c.dropout, c.init_seed);
    }
  }

  std::vector<ParameterT<T>*> parameters() override {
    std::vector<ParameterT<T>*> out;
    for (auto& b : branches_) b.collect_params(out);
    if (user_table_) out.push_back(&*user_table_);
    if (user_tower_) user_tower_->collect_params(out);
    return out;
  }

  std::vector<std::pair<std::string, TensorT<T>*>> named_tensors() override {
    std::vector<std::pair<std::string, TensorT<T>*>> out;
    for (auto& b : branches_) b.collect_tensors(out);
    if (user_table_) out.emplace_back(user_table_->name, &user_table_->value);
    if (user_tower_) user_tower_->collect_tensors(out);
    return out;
  }

  const std::vector<std::string>& eval_modalities() const override { return access_.names(); }

  typename GraphT<T>::Var batch_loss(GraphT<T>& g, const BatchPlan& plan) override {
    using Var = typename GraphT<T>::Var;
    if (!this->train_mode_) throw ValidationError("batch_loss requires train mode");
    const ModelConfig& c = this->cfg_;
    size_t B = plan.users.size();
    Var e_user = embed_users(g, plan.users);

    Var e_pos, e_neg;
    std::array<Var, 2> p_slots{-1, -1}, n_slots{-1, -1};
    if (plan.item_n_mod == 0) {
      // vanilla: every occurrence fuses the item's own full modality pool
      detail::EncodeBatch<T> req;
      std::vector<std::vector<int>> pos_groups(B), neg_groups(plan.neg_items.size());
      for (size_t b = 0; b < B; ++b)
        for (int m : access_.pool(plan.pos_items[b])) pos_groups[b].push_back(req.add(plan.pos_items[b], m));
      for (size_t n = 0; n < plan.neg_items.size(); ++n)
        for (int m : access_.pool(plan.neg_items[n])) neg_groups[n].push_back(req.add(plan.neg_items[n], m));
      for (size_t b = 0; b < B; ++b)
        if (pos_groups[b].empty())
          throw ValidationError("item " + std::to_string(plan.pos_items[b]) + " has no available modalities");
      for (size_t n = 0; n < neg_groups.size(); ++n)
        if (neg_groups[n].empty())
          throw ValidationError("item " + std::to_string(plan.neg_items[n]) + " has no available modalities");
      std::vector<int> where;
      Var encoded = encode_all(g, req, &where);
      auto remap = [&](std::vector<std::vector<int>>& groups) {
        for (auto& grp : groups)
          for (int& r : grp) r = where[static_cast<size_t>(r)];
      };
      remap(pos_groups);
      remap(neg_groups);
      e_pos = g.mean_groups(encoded, pos_groups);
      e_neg = g.mean_groups(encoded, neg_groups);
    } else {
      int n_mod = plan.item_n_mod;
      detail::EncodeBatch<T> req;
      std::vector<std::array<int, 2>> pos_req(B), neg_req(plan.neg_items.size());
      for (size_t b = 0; b < B; ++b)
        for (int s = 0; s < n_mod; ++s)
          pos_req[b][static_cast<size_t>(s)] = req.add(plan.pos_items[b], plan.item_mods[b][static_cast<size_t>(s)]);
      for (size_t n = 0; n < plan.neg_items.size(); ++n)
        for (int s = 0; s < n_mod; ++s)
          neg_req[n][static_cast<size_t>(s)] = req.add(plan.neg_items[n], plan.neg_mods[n][static_cast<size_t>(s)]);
      std::vector<int> where;
      Var encoded = encode_all(g, req, &where);
      auto slot_rows = [&](const std::vector<std::array<int, 2>>& reqs, int s) {
        std::vector<int> rows(reqs.size());
        for (size_t r = 0; r < reqs.size(); ++r)
          rows[r] = where[static_cast<size_t>(reqs[r][static_cast<size_t>(s)])];
        return rows;
      };
      for (int s = 0; s < n_mod; ++s) {
        p_slots[static_cast<size_t>(s)] = g.take_rows(encoded, slot_rows(pos_req, s));
        n_slots[static_cast<size_t>(s)] = g.take_rows(encoded, slot_rows(neg_req, s));
      }
      e_pos = n_mod == 1 ? p_slots[0] : g.mean_of({p_slots[0], p_slots[1]});
      e_neg = n_mod == 1 ? n_slots[0] : g.mean_of({n_slots[0], n_slots[1]});
    }

    Var scores = g.pair_scores(e_user, e_pos, e_neg);
    Var loss = g.bpr_from_scores(scores);
    if (c.contrastive() && c.loss.alpha > 0) {
      Var contr = symmetric_infonce(g, p_slots[0], p_slots[1], n_slots[0], n_slots[1],
                                    static_cast<T>(c.loss.tau));
      loss = g.add(loss, g.scale(contr, static_cast<T>(c.loss.alpha)));
    }
    return loss;
  }

  void begin_scoring(const std::vector<int>& subset) override {
    if (this->train_mode_) throw ValidationError("begin_scoring requires eval mode");
    std::vector<int> all_items(data_->n_items), all_users(data_->n_users);
    for (size_t i = 0; i < data_->n_items; ++i) all_items[i] = static_cast<int>(i);
    for (size_t u = 0; u < data_->n_users; ++u) all_users[u] = static_cast<int>(u);
    cached_items_ = embed_items(all_items, subset, &item_valid_);
    GraphT<T> g;
    cached_users_ = g.value(embed_users(g, all_users));
  }

  void score_user(int user, std::span<T> out) const override {
    size_t n = cached_items_.rows(), d = cached_items_.cols();
    kernels::matmul_nt(cached_items_.data.data(), cached_users_.row_ptr(static_cast<size_t>(user)),
                       out.data(), n, 1, d);
    for (size_t i = 0; i < n; ++i)
      if (!item_valid_[i]) out[i] = -std::numeric_limits<T>::infinity();
  }

  TensorT<T> embed_items(std::span<const int> items, const std::vector<int>& subset,
                         std::vector<uint8_t>* valid) override {
    using Var = typename GraphT<T>::Var;
    std::vector<int> use = subset;
    if (use.empty())
      for (int m = 0; m < access_.count(); ++m) use.push_back(m);
    for (int m : use)
      if (m < 0 || m >= access_.count()) throw ValidationError("modality subset id out of range");
    GraphT<T> g;
    detail::EncodeBatch<T> req;
    std::vector<std::vector<int>> groups(items.size());
    for (size_t r = 0; r < items.size(); ++r)
      for (int m : use)
        if (access_.available(m, items[r])) groups[r].push_back(req.add(items[r], m));
    std::vector<uint8_t> ok(items.size(), 1);
    for (size_t r = 0; r < items.size(); ++r)
      if (groups[r].empty()) ok[r] = 0;
    TensorT<T> out({items.size(), static_cast<size_t>(this->cfg_.embedding_dim)});
    if (req.size() > 0) {
      std::vector<int> where;
      Var encoded = encode_all(g, req, &where);
      const TensorT<T>& enc = g.value(encoded);
      size_t d = enc.cols();
      for (size_t r = 0; r < items.size(); ++r) {
        if (!ok[r]) continue;
        T* dst = out.row_ptr(r);
        for (int ri : groups[r]) {
          const T* src = enc.row_ptr(static_cast<size_t>(where[static_cast<size_t>(ri)]));
          for (size_t j = 0; j < d; ++j) dst[j] += src[j];
        }
        T inv = T(1) / static_cast<T>(groups[r].size());
        for (size_t j = 0; j < d; ++j) dst[j] *= inv;
      }
    }
    if (valid) *valid = std::move(ok);
    return out;
  }

  TensorT<T> modality_embeddings(int mod_id, std::span<const int> entities) override {
    std::vector<uint8_t> valid;
    TensorT<T> e = embed_items(entities, {mod_id}, &valid);
    for (uint8_t v : valid)
      if (!v) throw ValidationError("modality_embeddings: modality unavailable for a requested entity");
    return e;
  }

  DenseStackT<T>& branch(int m) { return branches_[static_cast<size_t>(m)]; }
  const ModalityAccess& item_access() const { return access_; }
  const ModalityAccess* plan_item_access() const override { return &access_; }

 private:
  typename GraphT<T>::Var encode_all(GraphT<T>& g, const detail::EncodeBatch<T>& req,
                                     std::vector<int>* where) {
    auto per_mod = [&](int m, typename GraphT<T>::Var x) {
      return branches_[static_cast<size_t>(m)].forward(g, x, this->train_mode_, dropout_rng());
    };
    return detail::encode_grouped(g, req, access_, per_mod, where);
  }

  typename GraphT<T>::Var embed_users(GraphT<T>& g, const std::vector<int>& users) {
    if (user_table_) return g.rows(*user_table_, users);
    ModalityAccess prof(*data_, *tv_, "user", {kInteractionsModality});
    return user_tower_->forward(g, g.input(prof.template gather<T>(0, users)), this->train_mode_,
                                dropout_rng());
  }

  SeededRng* dropout_rng() {
    if (this->cfg_.dropout <= 0) return nullptr;
    if (!drop_rng_) drop_rng_ = std::make_unique<SeededRng>(this->cfg_.init_seed, "dropout");
    return drop_rng_.get();
  }

  const Dataset* data_;
  const TrainView* tv_;
  ModalityAccess access_;
  std::vector<DenseStackT<T>> branches_;
  std::optional<ParameterT<T>> user_table_;
  std::optional<DenseStackT<T>> user_tower_;
  std::unique_ptr<SeededRng> drop_rng_;
  TensorT<T> cached_items_, cached_users_;
  std::vector<uint8_t> item_valid_;
};

// Matrix factorization with BPR.
template <typename T>
class MfT : public RecModelT<T> {
 public:
  MfT(const ModelConfig& cfg, const Dataset& d, const TrainView&) : RecModelT<T>(cfg) {
    size_t emb = static_cast<size_t>(cfg.embedding_dim);
    users_ = make_table("mf.user_table", d.n_users, emb);
    items_ = make_table("mf.item_table", d.n_items, emb);
  }

  std::vector<ParameterT<T>*> parameters() override { return {&users_, &items_}; }
  std::vector<std::pair<std::string, TensorT<T>*>> named_tensors() override {
    return {{users_.name, &users_.value}, {items_.name, &items_.value}};
  }

  typename GraphT<T>::Var batch_loss(GraphT<T>& g, const BatchPlan& plan) override {
    auto e_user = g.rows(users_, plan.users);
    auto e_pos = g.rows(items_, plan.pos_items);
    auto e_neg = g.rows(items_, plan.neg_items);
    return g.bpr_from_scores(g.pair_scores(e_user, e_pos, e_neg));
  }

  void begin_scoring(const std::vector<int>& subset) override {
    if (!subset.empty()) throw ValidationError("mf has no modalities to subset");
  }

  void score_user(int user, std::span<T> out) const override {
    kernels::matmul_nt(items_.value.data.data(), users_.value.row_ptr(static_cast<size_t>(user)),
                       out.data(), items_.value.rows(), 1, items_.value.cols());
  }

 private:
  ParameterT<T> make_table(const std::string& name, size_t n, size_t dim) {
    TensorT<T> t({n, dim});
    SeededRng rng(this->cfg_.init_seed, "init." + name);
    for (T& v : t.data) v = static_cast<T>(rng.normal() * 0.1);
    return ParameterT<T>(name, std::move(t));
  }

  ParameterT<T> users_, items_;
};

// Two profile towers with a cosine scorer clamped below at min_score.
template <typename T>
class DeepMfT : public RecModelT<T> {
 public:
  DeepMfT(const ModelConfig& cfg, const Dataset& d, const TrainView& tv)
      : RecModelT<T>(cfg), data_(&d), tv_(&tv) {
    size_t emb = static_cast<size_t>(cfg.embedding_dim);
    user_tower_.init("deepmf.user_tower", d.n_items, cfg.tower_layers, emb, false, cfg.tower_relu_output,
                     cfg.dropout, cfg.init_seed);
    item_tower_.init("deepmf.item_tower", d.n_users, cfg.tower_layers, emb, false, cfg.tower_relu_output,
                     cfg.dropout, cfg.init_seed);
  }

  std::vector<ParameterT<T>*> parameters() override {
    std::vector<ParameterT<T>*> out;
    user_tower_.collect_params(out);
    item_tower_.collect_params(out);
    return out;
  }

  std::vector<std::pair<std::string, TensorT<T>*>> named_tensors() override {
    std::vector<std::pair<std::string, TensorT<T>*>> out;
    user_tower_.collect_tensors(out);
    item_tower_.collect_tensors(out);
    return out;
  }

  typename GraphT<T>::Var batch_loss(GraphT<T>& g, const BatchPlan& plan) override {
    using Var = typename GraphT<T>::Var;
    size_t B = plan.users.size(), nn = static_cast<size_t>(plan.n_neg);
    Var e_user = tower_forward(g, user_tower_, user_profiles(plan.users));
    Var e_pos = tower_forward(g, item_tower_, item_profiles(plan.pos_items));
    Var e_neg = tower_forward(g, item_tower_, item_profiles(plan.neg_items));
    // Pair rows up as [pos_b, neg_b0, ..] per user, then row-wise cosine.
    std::vector<int> urep(B * (1 + nn)), iord(B * (1 + nn));
    Var items_all = g.concat_rows({e_pos, e_neg});
    for (size_t b = 0; b < B; ++b) {
      urep[b * (1 + nn)] = static_cast<int>(b);
      iord[b * (1 + nn)] = static_cast<int>(b);
      for (size_t n = 0; n < nn; ++n) {
        urep[b * (1 + nn) + 1 + n] = static_cast<int>(b);
        iord[b * (1 + nn) + 1 + n] = static_cast<int>(B + b * nn + n);
      }
    }
    Var cos = g.rowwise_cosine_clamped(g.take_rows(e_user, urep), g.take_rows(items_all, iord),
                                       static_cast<T>(this->cfg_.min_score));
    return g.bpr_from_scores(g.reshape(cos, {B, 1 + nn}));
  }

  void begin_scoring(const std::vector<int>& subset) override {
    if (!subset.empty()) throw ValidationError("deepmf has no modalities to subset");
    if (this->train_mode_) throw ValidationError("begin_scoring requires eval mode");
    std::vector<int> all_items(data_->n_items), all_users(data_->n_users);
    for (size_t i = 0; i < data_->n_items; ++i) all_items[i] = static_cast<int>(i);
    for (size_t u = 0; u < data_->n_users; ++u) all_users[u] = static_cast<int>(u);
    GraphT<T> gu;
    cached_users_ = gu.value(tower_forward(gu, user_tower_, user_profiles(all_users)));
    GraphT<T> gi;
    cached_items_ = gi.value(tower_forward(gi, item_tower_, item_profiles(all_items)));
    user_norms_ = row_norms(cached_users_);
    item_norms_ = row_norms(cached_items_);
  }

  void score_user(int user, std::span<T> out) const override {
    size_t n = cached_items_.rows(), d = cached_items_.cols();
    const T* u = cached_users_.row_ptr(static_cast<size_t>(user));
    double nu = user_norms_[static_cast<size_t>(user)];
    double mu = this->cfg_.min_score;
    for (size_t i = 0; i < n; ++i) {
      const T* it = cached_items_.row_ptr(i);
      double dot = 0;
      for (size_t j = 0; j < d; ++j) dot += static_cast<double>(u[j]) * static_cast<double>(it[j]);
      double denom = nu * item_norms_[i];
      double cosv = denom > 1e-30 ? dot / denom : 0.0;
      out[i] = static_cast<T>(std::max(mu, cosv));
    }
  }

 private:
  TensorT<T> user_profiles(const std::vector<int>& users) {
    ModalityAccess prof(*data_, *tv_, "user", {kInteractionsModality});
    return prof.template gather<T>(0, users);
  }
  TensorT<T> item_profiles(const std::vector<int>& items) {
    ModalityAccess prof(*data_, *tv_, "item", {kInteractionsModality});
    return prof.template gather<T>(0, items);
  }

  typename GraphT<T>::Var tower_forward(GraphT<T>& g, DenseStackT<T>& tower, TensorT<T> profiles) {
    auto x = g.input(std::move(profiles));
    if (this->cfg_.tower_relu_input) x = g.relu(x);
    return tower.forward(g, x, this->train_mode_, nullptr);
  }

  static std::vector<double> row_norms(const TensorT<T>& m) {
    std::vector<double> out(m.rows());
    for (size_t i = 0; i < m.rows(); ++i) {
      double s = 0;
      for (size_t j = 0; j < m.cols(); ++j)
        s += static_cast<double>(m.at(i, j)) * static_cast<double>(m.at(i, j));
      out[i] = std::sqrt(s);
    }
    return out;
  }

  const Dataset* data_;
  const TrainView* tv_;
  DenseStackT<T> user_tower_, item_tower_;
  TensorT<T> cached_users_, cached_items_;
  std::vector<double> user_norms_, item_norms_;
};

// Non-personalized popularity scorer.
template <typename T>
class PopT : public RecModelT<T> {
 public:
  PopT(const ModelConfig& cfg, const Dataset& d, const TrainView& tv) : RecModelT<T>(cfg) {
    phi_ = TensorT<T>({d.n_items});
    for (size_t i = 0; i < d.n_items; ++i) phi_.data[i] = static_cast<T>(tv.popularity[i]);
  }
  bool trainable() const override { return false; }
  std::vector<std::pair<std::string, TensorT<T>*>> named_tensors() override {
    return {{"pop.phi", &phi_}};
  }
  void begin_scoring(const std::vector<int>& subset) override {
    if (!subset.empty()) throw ValidationError("pop has no modalities to subset");
  }
  void score_user(int, std::span<T> out) const override {
    for (size_t i = 0; i < phi_.numel(); ++i) out[i] = phi_.data[i];
  }

 private:
  TensorT<T> phi_;
};

// Uniform scores, deterministic per (seed, user, item).
template <typename T>
class RandT : public RecModelT<T> {
 public:
  RandT(const ModelConfig& cfg, const Dataset& d, const TrainView&) : RecModelT<T>(cfg) {
    n_items_ = d.n_items;
    base_ = hash64(cfg.init_seed, "rand-score");
  }
  bool trainable() const override { return false; }
  void begin_scoring(const std::vector<int>& subset) override {
    if (!subset.empty()) throw ValidationError("rand has no modalities to subset");
  }
  void score_user(int user, std::span<T> out) const override {
    for (size_t i = 0; i < n_items_; ++i) {
      uint64_t h = splitmix64_mix(splitmix64_mix(base_ + static_cast<uint64_t>(user)) + i);
      out[i] = static_cast<T>(static_cast<double>(h >> 11) * 0x1.0p-53);
    }
  }

 private:
  size_t n_items_ = 0;
  uint64_t base_ = 0;
};

inline void validate_model_config(const ModelConfig& cfg, const Dataset& d) {
  static const std::set<std::string> kinds{"sibrar", "mubrar", "mf", "deepmf", "pop", "rand"};
  if (!kinds.count(cfg.kind)) throw ValidationError("unknown model kind '" + cfg.kind + "'");
  if (cfg.embedding_dim < 1) throw ValidationError("embedding_dim must be positive");
  if (cfg.loss.tau <= 0) throw ValidationError("loss.tau must be positive");
  if (cfg.loss.n_neg < 1) throw ValidationError("loss.n_neg must be >= 1");
  if (cfg.loss.alpha < 0 || cfg.loss.beta < 0) throw ValidationError("contrastive weights must be >= 0");
  if (cfg.dropout < 0 || cfg.dropout >= 1) throw ValidationError("dropout must be in [0, 1)");
  if (cfg.min_score < 0) throw ValidationError("min_score must be >= 0");

  auto check_names = [&](const std::vector<std::string>& names, const std::string& entity) {
    std::set<std::string> seen;
    const auto& stores = entity == "item" ? d.item_modalities : d.user_modalities;
    for (const auto& n : names) {
      if (!seen.insert(n).second) throw ValidationError("duplicate train modality '" + n + "'");
      if (n == kInteractionsModality) continue;
      bool found = false;
      for (const auto& s : stores) found = found || s.name == n;
      if (!found) throw ValidationError("train modality '" + n + "' not found for entity " + entity);
    }
  };

  if (cfg.kind == "sibrar") {
    if (cfg.side != "item" && cfg.side != "user" && cfg.side != "both")
      throw ValidationError("sibrar side must be item | user | both");
    std::string v = cfg.resolved_variant();
    if (v != "s" && v != "sc") throw ValidationError("sibrar variant must be 's' or 'sc'");
    bool has_contrast = cfg.loss.alpha > 0 || (cfg.side == "both" && cfg.loss.beta > 0);
    if (v == "sc" && !has_contrast)
      throw ValidationError("sibrar 'sc' needs a positive contrastive weight");
    if (v == "s" && has_contrast)
      throw ValidationError("sibrar 's' is sampling-only; set alpha (and beta) to 0");
    if (cfg.shared_dim < 1) throw ValidationError("shared_dim must be positive");
    auto count_names = [&](const std::string& entity, const std::vector<std::string>& given) {
      std::vector<std::string> names = given.empty() ? ModalityAccess::default_names(d, entity) : given;
      check_names(names, entity);
      return names.size();
    };
    if (cfg.side != "user") {
      size_t n = count_names("item", cfg.train_modalities);
      if (v == "sc" && cfg.loss.alpha > 0 && n < 2)
        throw ValidationError("contrastive training needs >= 2 item modalities");
    }
    if (cfg.side != "item") {
      size_t n = count_names("user", cfg.user_train_modalities);
      double w = cfg.side == "both" ? cfg.loss.beta : cfg.loss.alpha;
      if (v == "sc" && w > 0 && n < 2)
        throw ValidationError("contrastive training needs >= 2 user modalities");
    }
    if (cfg.user_embedder != "lookup" && cfg.user_embedder != "encoder")
      throw ValidationError("user_embedder must be lookup | encoder");
    if (cfg.item_embedder != "lookup" && cfg.item_embedder != "encoder")
      throw ValidationError("item_embedder must be lookup | encoder");
  } else if (cfg.kind == "mubrar") {
    std::string v = cfg.resolved_variant();
    if (v != "vanilla" && v != "s" && v != "sc")
      throw ValidationError("mubrar variant must be vanilla | s | sc");
    if (v == "sc" && cfg.loss.alpha <= 0) throw ValidationError("mubrar 'sc' needs alpha > 0");
    if (v != "sc" && cfg.loss.alpha > 0)
      throw ValidationError("mubrar '" + v + "' does not use a contrastive loss; set alpha to 0");
    if (cfg.branch_layers.empty()) throw ValidationError("mubrar branches need depth >= 1");
    std::vector<std::string> names =
        cfg.train_modalities.empty() ? ModalityAccess::default_names(d, "item") : cfg.train_modalities;
    check_names(names, "item");
    if (v == "sc" && names.size() < 2)
      throw ValidationError("contrastive training needs >= 2 item modalities");
  }
}

template <typename T>
std::unique_ptr<RecModelT<T>> make_model(const ModelConfig& cfg, const Dataset& d, const TrainView& tv) {
  validate_model_config(cfg, d);
  if (cfg.kind == "sibrar") return std::make_unique<SiBraRT<T>>(cfg, d, tv);
  if (cfg.kind == "mubrar") return std::make_unique<MuBraRT<T>>(cfg, d, tv);
  if (cfg.kind == "mf") return std::make_unique<MfT<T>>(cfg, d, tv);
  if (cfg.kind == "deepmf") return std::make_unique<DeepMfT<T>>(cfg, d, tv);
  if (cfg.kind == "pop") return std::make_unique<PopT<T>>(cfg, d, tv);
  if (cfg.kind == "rand") return std::make_unique<RandT<T>>(cfg, d, tv);
  throw ValidationError("unknown model kind '" + cfg.kind + "'");
}

}  // namespace mmrec

#endif
