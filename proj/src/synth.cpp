#include "mmrec/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "mmrec/common.hpp"
#include "mmrec/rng.hpp"

namespace mmrec {

using nlohmann::json;
namespace fs = std::filesystem;

json SynthConfig::to_json() const {
  json jm = json::array();
  for (const auto& m : modalities)
    jm.push_back({{"name", m.name}, {"entity", m.entity}, {"dim", m.dim}, {"noise_sigma", m.noise_sigma}});
  return json{{"n_users", n_users},   {"n_items", n_items},       {"latent_dim", latent_dim},
              {"modalities", jm},     {"density", density},       {"logit_scale", logit_scale},
              {"emphasis_weak", emphasis_weak}, {"seed", seed}};
}

SynthConfig SynthConfig::from_json(const json& j) {
  SynthConfig c;
  c.n_users = j.value("n_users", c.n_users);
  c.n_items = j.value("n_items", c.n_items);
  c.latent_dim = j.value("latent_dim", c.latent_dim);
  if (j.contains("modalities")) {
    c.modalities.clear();
    for (const auto& jm : j.at("modalities")) {
      SynthModality m;
      m.name = jm.at("name").get<std::string>();
      m.entity = jm.value("entity", m.entity);
      m.dim = jm.at("dim").get<size_t>();
      m.noise_sigma = jm.value("noise_sigma", m.noise_sigma);
      c.modalities.push_back(m);
    }
  }
  c.density = j.value("density", c.density);
  c.logit_scale = j.value("logit_scale", c.logit_scale);
  c.emphasis_weak = j.value("emphasis_weak", c.emphasis_weak);
  c.seed = j.value("seed", c.seed);
  return c;
}

namespace {

Tensor draw_latents(size_t n, size_t d, SeededRng& rng) {
  // coordinates ~ normal(0, 1/sqrt(d)) so z_u . z_i has unit variance
  Tensor z({n, d});
  double sigma = std::pow(static_cast<double>(d), -0.25);
  for (float& v : z.data) v = static_cast<float>(rng.normal() * sigma);
  return z;
}

double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

}  // namespace

Dataset generate(const SynthConfig& cfg, const fs::path& dir) {
  if (cfg.n_users < 1 || cfg.n_items < 1) throw ValidationError("synth: need users and items");
  if (cfg.density <= 0 || cfg.density >= 1) throw ValidationError("synth: density must be in (0,1)");
  if (cfg.latent_dim < 1) throw ValidationError("synth: latent_dim must be positive");
  double expected = cfg.density * static_cast<double>(cfg.n_users) * static_cast<double>(cfg.n_items);
  double need = 5.0 * static_cast<double>(std::max(cfg.n_users, cfg.n_items));
  if (expected < static_cast<double>(std::max(cfg.n_users, cfg.n_items)))
    throw ValidationError("synth: density " + fmt_double(cfg.density) +
                          " cannot give every user and item an interaction");
  if (expected < need)
    std::fprintf(stderr,
                 "synth: warning: expected interaction count %.0f is below the 5-core survival bound %.0f\n",
                 expected, need);
  for (const auto& m : cfg.modalities) {
    if (m.entity != "user" && m.entity != "item")
      throw ValidationError("synth modality entity must be user|item");
    if (m.noise_sigma < 0) throw ValidationError("synth noise_sigma must be >= 0");
    if (cfg.emphasis_weak <= 0 || cfg.emphasis_weak > 1)
      throw ValidationError("synth emphasis_weak must be in (0, 1]");
    if (m.name == "interactions") throw ValidationError("'interactions' is a reserved modality name");
  }

  SeededRng zrng(cfg.seed, "synth.latents");
  Tensor zu = draw_latents(cfg.n_users, cfg.latent_dim, zrng);
  Tensor zi = draw_latents(cfg.n_items, cfg.latent_dim, zrng);

  size_t total = cfg.n_users * cfg.n_items;
  std::vector<float> logits(total);
  for (size_t u = 0; u < cfg.n_users; ++u)
    for (size_t i = 0; i < cfg.n_items; ++i) {
      double dot = 0;
      for (size_t k = 0; k < cfg.latent_dim; ++k)
        dot += static_cast<double>(zu.at(u, k)) * static_cast<double>(zi.at(i, k));
      logits[u * cfg.n_items + i] = static_cast<float>(cfg.logit_scale * dot);
    }

  // One fixed uniform draw per pair; the realized interaction count is then a
  // monotone step function of the bias b, so bisection can hit the target
  // count almost exactly.
  SeededRng urng(cfg.seed, "synth.interactions");
  std::vector<float> unif(total);
  for (float& v : unif) v = static_cast<float>(urng.next_double());

  auto count_at = [&](double b) {
    size_t c = 0;
    for (size_t p = 0; p < total; ++p)
      if (static_cast<double>(unif[p]) < sigmoid(static_cast<double>(logits[p]) + b)) ++c;
    return c;
  };
  size_t target = static_cast<size_t>(std::llround(cfg.density * static_cast<double>(total)));
  double lo = -40, hi = 40;
  if (count_at(lo) > target || count_at(hi) < target)
    throw std::runtime_error("synth: density calibration range exhausted");
  for (int it = 0; it < 100 && hi - lo > 1e-12; ++it) {
    double mid = 0.5 * (lo + hi);
    if (count_at(mid) < target)
      lo = mid;
    else
      hi = mid;
  }
  double bias = hi;
  size_t realized = count_at(bias);
  if (std::abs(static_cast<double>(realized) - static_cast<double>(target)) >
      0.05 * static_cast<double>(target))
    throw std::runtime_error("synth: density calibration failed to converge (realized " +
                             std::to_string(realized) + ", target " + std::to_string(target) + ")");

  Dataset d;
  d.name = "synth";
  d.n_users = cfg.n_users;
  d.n_items = cfg.n_items;
  for (size_t u = 0; u < cfg.n_users; ++u) d.user_ids.push_back("u" + std::to_string(u));
  for (size_t i = 0; i < cfg.n_items; ++i) d.item_ids.push_back("i" + std::to_string(i));
  for (size_t u = 0; u < cfg.n_users; ++u)
    for (size_t i = 0; i < cfg.n_items; ++i) {
      size_t p = u * cfg.n_items + i;
      if (static_cast<double>(unif[p]) < sigmoid(static_cast<double>(logits[p]) + bias))
        d.interactions.emplace_back(static_cast<int>(u), static_cast<int>(i));
    }

  // Every entity needs at least one interaction for the warm protocol; patch
  // empty ones with their highest-probability missing pair.
  {
    std::vector<int> udeg(cfg.n_users, 0), ideg(cfg.n_items, 0);
    for (auto [u, i] : d.interactions) {
      ++udeg[static_cast<size_t>(u)];
      ++ideg[static_cast<size_t>(i)];
    }
    std::vector<std::pair<int, int>> patches;
    for (size_t u = 0; u < cfg.n_users; ++u) {
      if (udeg[u] > 0) continue;
      size_t best = 0;
      for (size_t i = 1; i < cfg.n_items; ++i)
        if (logits[u * cfg.n_items + i] > logits[u * cfg.n_items + best]) best = i;
      patches.emplace_back(static_cast<int>(u), static_cast<int>(best));
      ++ideg[best];
    }
    for (size_t i = 0; i < cfg.n_items; ++i) {
      if (ideg[i] > 0) continue;
      size_t best = 0;
      for (size_t u = 1; u < cfg.n_users; ++u)
        if (logits[u * cfg.n_items + i] > logits[best * cfg.n_items + i]) best = u;
      patches.emplace_back(static_cast<int>(best), static_cast<int>(i));
    }
    d.interactions.insert(d.interactions.end(), patches.begin(), patches.end());
    std::sort(d.interactions.begin(), d.interactions.end());
    d.interactions.erase(std::unique(d.interactions.begin(), d.interactions.end()), d.interactions.end());
  }

  json truth;
  truth["latent_dim"] = cfg.latent_dim;
  truth["logit_scale"] = cfg.logit_scale;
  truth["bias"] = bias;
  truth["files"] = {{"user_latents", "truth_user_latents.bin"}, {"item_latents", "truth_item_latents.bin"}};

  size_t mod_index = 0;
  for (const auto& sm : cfg.modalities) {
    const Tensor& z = sm.entity == "user" ? zu : zi;
    size_t n = z.rows();
    // Each modality emphasizes its own round-robin share of the latent
    // dimensions (others enter weakly). The map stays full rank, so the latent
    // is still linearly recoverable from any single modality, but modalities
    // are no longer interchangeable views.
    std::vector<double> weight(cfg.latent_dim, cfg.emphasis_weak);
    size_t n_mods = cfg.modalities.size();
    for (size_t k = 0; k < cfg.latent_dim; ++k)
      if (k % n_mods == mod_index % n_mods) weight[k] = 1.0;
    double wsq = 0;
    for (double w : weight) wsq += w * w;
    // scale so clean features have roughly unit variance given Var(z_k)=1/sqrt(L)
    double s = std::sqrt(std::sqrt(static_cast<double>(cfg.latent_dim)) / wsq);
    Tensor map({sm.dim, cfg.latent_dim});
    SeededRng mrng(cfg.seed, "synth.map." + sm.entity + "." + sm.name);
    for (size_t r = 0; r < sm.dim; ++r)
      for (size_t k = 0; k < cfg.latent_dim; ++k)
        map.at(r, k) = static_cast<float>(mrng.normal() * s * weight[k]);
    ++mod_index;
    Tensor x({n, sm.dim});
    SeededRng nrng(cfg.seed, "synth.noise." + sm.entity + "." + sm.name);
    for (size_t r = 0; r < n; ++r)
      for (size_t c = 0; c < sm.dim; ++c) {
        double s = 0;
        for (size_t k = 0; k < cfg.latent_dim; ++k)
          s += static_cast<double>(z.at(r, k)) * static_cast<double>(map.at(c, k));
        x.at(r, c) = static_cast<float>(s + sm.noise_sigma * nrng.normal());
      }
    ModalityStore store;
    store.name = sm.name;
    store.entity = sm.entity;
    store.dim = sm.dim;
    store.matrix = std::move(x);
    store.available.assign(n, 1);
    if (sm.entity == "user")
      d.user_modalities.push_back(std::move(store));
    else
      d.item_modalities.push_back(std::move(store));
    save_mmr1(dir / ("truth_map_" + sm.entity + "_" + sm.name + ".bin"), map);
    truth["files"]["map_" + sm.entity + "_" + sm.name] = "truth_map_" + sm.entity + "_" + sm.name + ".bin";
    truth["noise_sigma"][sm.name] = sm.noise_sigma;
  }

  d.rebuild_adjacency();
  save_dataset(d, dir);
  save_mmr1(dir / "truth_user_latents.bin", zu);
  save_mmr1(dir / "truth_item_latents.bin", zi);
  truth["config"] = cfg.to_json();
  write_text_file(dir / "truth.json", truth.dump(2) + "\n");
  return d;
}

}  // namespace mmrec
