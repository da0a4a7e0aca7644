#ifndef MMREC_SYNTH_HPP
#define MMREC_SYNTH_HPP

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmrec/dataset.hpp"

namespace mmrec {

struct SynthModality {
  std::string name;
  std::string entity = "item";
  size_t dim = 16;
  double noise_sigma = 0.3;
};

// Planted-structure generator: user/item latents drive both the interaction
// probabilities and every modality matrix, so each modality carries
// recoverable signal about what users interact with.
struct SynthConfig {
  size_t n_users = 200;
  size_t n_items = 300;
  size_t latent_dim = 8;
  std::vector<SynthModality> modalities{{"m0", "item", 16, 0.3},
                                        {"m1", "item", 24, 0.3},
                                        {"m2", "item", 32, 0.3}};
  double density = 0.03;
  double logit_scale = 2.5;   // c in sigma(c * z_u . z_i + b)
  double emphasis_weak = 0.12;  // weight of a modality's non-emphasized latent dims
  uint64_t seed = 7;

  nlohmann::json to_json() const;
  static SynthConfig from_json(const nlohmann::json& j);
};

// Generates the dataset and writes the dataset-core layout plus truth.json
// (latents, maps, calibration constants) under `dir`. Byte-identical for a
// fixed config.
Dataset generate(const SynthConfig& cfg, const std::filesystem::path& dir);

}  // namespace mmrec

#endif
