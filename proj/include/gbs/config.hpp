#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "gbs/alphagen.hpp"
#include "gbs/blend.hpp"
#include "gbs/losses.hpp"
#include "gbs/net.hpp"

namespace gbs::workbench {

struct TrainConfig {
  int batch_size = 8;
  int steps = 1000;
  double learning_rate = 1e-4;
  int lr_decay_steps = 50000;  // divide by 10 every this many steps
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  uint64_t seed = 0;
  int checkpoint_every = 0;  // 0: final checkpoint only
  losses::LossWeights weights;
  alphagen::BatchMixSpec mix = alphagen::BatchMixSpec::default_mix();
  blend::AugmentationSpec augment;
  net::ModelConfig model;

  void validate() const;
};

// Learning rate after `step` completed updates: lr0 * 10^-floor(step / K).
double learning_rate_at(const TrainConfig& config, int step);

// Configuration text: one "key = value" per line, '#' starts a comment.
// Keys (defaults in brackets):
//   batch_size [8]  steps [1000]  learning_rate [1e-4]  lr_decay_steps [50000]
//   adam_beta1 [0.9]  adam_beta2 [0.999]  adam_eps [1e-8]  seed [0]
//   checkpoint_every [0]
//   gamma_adv [1]  gamma_neg [1]  gamma_i2t [0.1]  temperature [10]
//   alpha_mix [perlin:0.5,gaussian_pair:0.5]
//   perlin.frequency [4]  perlin.octaves [3]  perlin.persistence [0.5]
//   gaussian.sigma_min [0.1]  gaussian.sigma_max [0.5]
//   circle.radius_min [0.15]  circle.radius_max [0.45]
//   scale_shift.scale_min [0.3]  scale_shift.scale_max [0.8]
//   aug.text_dropout [0]  aug.crop_min [1]  aug.flip [0]  aug.brightness [0]
//   aug.contrast [0]  aug.saturation [0]  aug.grayscale [0]
//   model.image_size [64]  model.pyramid_depth [2]  model.stride [2]
//   model.encoder_widths [32,64,128,256]  model.decoder_width [64]
//   model.attenuation [distance]  model.embed_dim [32]  model.attention_dim [16]
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(const std::string& text);
KeyValues read_key_values(const std::filesystem::path& path);
// "key=value" override.
void apply_override(KeyValues& kv, const std::string& assignment);

TrainConfig train_config_from(const KeyValues& kv);
KeyValues to_key_values(const TrainConfig& config);
std::string to_text(const KeyValues& kv);

// Desk preset used by the toy end-to-end runs.
TrainConfig toy_preset();

alphagen::BatchMixSpec parse_mix(const std::string& text, const alphagen::AlphaGenSpec& params);
std::string format_mix(const alphagen::BatchMixSpec& mix);

}  // namespace gbs::workbench
