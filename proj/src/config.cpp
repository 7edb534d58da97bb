#include "gbs/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace gbs::workbench {

void TrainConfig::validate() const {
  GBS_CHECK(batch_size >= 4 && batch_size % 2 == 0, kConfig, "batch_size must be even and >= 4");
  GBS_CHECK(steps >= 0, kConfig, "steps must be >= 0");
  GBS_CHECK(learning_rate > 0.0, kConfig, "learning_rate must be positive");
  GBS_CHECK(lr_decay_steps >= 1, kConfig, "lr_decay_steps must be >= 1");
  GBS_CHECK(weights.gamma_adv >= 0 && weights.gamma_neg >= 0 && weights.gamma_i2t >= 0, kConfig,
            "loss weights must be nonnegative");
  GBS_CHECK(weights.temperature > 0.0, kConfig, "temperature must be positive");
  GBS_CHECK(augment.text_dropout >= 0 && augment.text_dropout <= 1 && augment.flip_probability >= 0 &&
                augment.flip_probability <= 1 && augment.grayscale_probability >= 0 &&
                augment.grayscale_probability <= 1,
            kConfig, "augmentation probabilities must lie in [0, 1]");
  GBS_CHECK(augment.target_height == model.image_height && augment.target_width == model.image_width, kConfig,
            "augmentation target size must equal the model resolution");
  model.validate();
}

double learning_rate_at(const TrainConfig& config, int step) {
  const int decays = step / config.lr_decay_steps;
  double lr = config.learning_rate;
  for (int i = 0; i < decays; ++i) lr /= 10.0;
  return lr;
}

KeyValues parse_key_values(const std::string& text) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    GBS_CHECK(eq != std::string::npos, kConfig, "config line " + std::to_string(line_no) + ": expected key = value");
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

KeyValues read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  GBS_CHECK(in.good(), kIo, "cannot open config: " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_key_values(buffer.str());
}

void apply_override(KeyValues& kv, const std::string& assignment) {
  auto parsed = parse_key_values(assignment);
  GBS_CHECK(parsed.size() == 1, kConfig, "override must look like key=value: " + assignment);
  kv[parsed.begin()->first] = parsed.begin()->second;
}

alphagen::BatchMixSpec parse_mix(const std::string& text, const alphagen::AlphaGenSpec& params) {
  alphagen::BatchMixSpec mix;
  mix.params = params;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto colon = item.find(':');
    GBS_CHECK(colon != std::string::npos, kConfig, "alpha_mix entries look like scheme:fraction");
    mix.entries.push_back({alphagen::parse_scheme(item.substr(0, colon)), std::stod(item.substr(colon + 1))});
  }
  GBS_CHECK(!mix.entries.empty(), kConfig, "alpha_mix is empty");
  return mix;
}

namespace {

// Shortest text that reads back to the same double.
std::string fmt(double v) {
  char buf[32];
  const auto end = std::to_chars(buf, buf + sizeof buf, v).ptr;
  return std::string(buf, end);
}

}  // namespace

std::string format_mix(const alphagen::BatchMixSpec& mix) {
  std::ostringstream out;
  for (std::size_t i = 0; i < mix.entries.size(); ++i)
    out << (i ? "," : "") << alphagen::scheme_name(mix.entries[i].scheme) << ":" << fmt(mix.entries[i].fraction);
  return out.str();
}

namespace {

std::vector<int> parse_ints(const std::string& s) {
  std::vector<int> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(std::stoi(item));
  return out;
}

}  // namespace

TrainConfig train_config_from(const KeyValues& kv) {
  TrainConfig c;
  alphagen::AlphaGenSpec alpha = c.mix.params;
  std::string mix_text = format_mix(c.mix);
  int image_size = c.model.image_height;

  for (const auto& [key, value] : kv) {
    try {
      if (key == "batch_size") c.batch_size = std::stoi(value);
      else if (key == "steps") c.steps = std::stoi(value);
      else if (key == "learning_rate") c.learning_rate = std::stod(value);
      else if (key == "lr_decay_steps") c.lr_decay_steps = std::stoi(value);
      else if (key == "adam_beta1") c.adam_beta1 = std::stod(value);
      else if (key == "adam_beta2") c.adam_beta2 = std::stod(value);
      else if (key == "adam_eps") c.adam_eps = std::stod(value);
      else if (key == "seed") c.seed = std::stoull(value);
      else if (key == "checkpoint_every") c.checkpoint_every = std::stoi(value);
      else if (key == "gamma_adv") c.weights.gamma_adv = std::stod(value);
      else if (key == "gamma_neg") c.weights.gamma_neg = std::stod(value);
      else if (key == "gamma_i2t") c.weights.gamma_i2t = std::stod(value);
      else if (key == "temperature") c.weights.temperature = std::stod(value);
      else if (key == "alpha_mix") mix_text = value;
      else if (key == "perlin.frequency") alpha.perlin.base_frequency = std::stod(value);
      else if (key == "perlin.octaves") alpha.perlin.octaves = std::stoi(value);
      else if (key == "perlin.persistence") alpha.perlin.persistence = std::stod(value);
      else if (key == "gaussian.sigma_min") alpha.gaussian.sigma_min = std::stod(value);
      else if (key == "gaussian.sigma_max") alpha.gaussian.sigma_max = std::stod(value);
      else if (key == "circle.radius_min") alpha.circle.radius_min = std::stod(value);
      else if (key == "circle.radius_max") alpha.circle.radius_max = std::stod(value);
      else if (key == "scale_shift.scale_min") alpha.scale_shift.scale_min = std::stod(value);
      else if (key == "scale_shift.scale_max") alpha.scale_shift.scale_max = std::stod(value);
      else if (key == "aug.text_dropout") c.augment.text_dropout = std::stod(value);
      else if (key == "aug.crop_min") c.augment.crop_min_fraction = std::stod(value);
      else if (key == "aug.flip") c.augment.flip_probability = std::stod(value);
      else if (key == "aug.brightness") c.augment.brightness = std::stod(value);
      else if (key == "aug.contrast") c.augment.contrast = std::stod(value);
      else if (key == "aug.saturation") c.augment.saturation = std::stod(value);
      else if (key == "aug.grayscale") c.augment.grayscale_probability = std::stod(value);
      else if (key == "model.image_size") image_size = std::stoi(value);
      else if (key == "model.pyramid_depth") c.model.pyramid_depth = std::stoi(value);
      else if (key == "model.stride") c.model.stride = std::stoi(value);
      else if (key == "model.encoder_widths") c.model.encoder_widths = parse_ints(value);
      else if (key == "model.decoder_width") c.model.decoder_width = std::stoi(value);
      else if (key == "model.attenuation") c.model.attenuation = net::parse_attenuation(value);
      else if (key == "model.embed_dim") c.model.embed_dim = std::stoi(value);
      else if (key == "model.attention_dim") c.model.attention_dim = std::stoi(value);
      else throw Error(ErrorKind::kConfig, "unknown config key: " + key);
    } catch (const std::invalid_argument&) {
      throw Error(ErrorKind::kConfig, "bad value for " + key + ": " + value);
    } catch (const std::out_of_range&) {
      throw Error(ErrorKind::kConfig, "value out of range for " + key + ": " + value);
    }
  }
  c.mix = parse_mix(mix_text, alpha);
  c.model.image_height = c.model.image_width = image_size;
  c.augment.target_height = c.augment.target_width = image_size;
  c.validate();
  return c;
}

KeyValues to_key_values(const TrainConfig& c) {
  const auto& a = c.mix.params;
  std::string widths;
  for (std::size_t i = 0; i < c.model.encoder_widths.size(); ++i)
    widths += (i ? "," : "") + std::to_string(c.model.encoder_widths[i]);
  return {
      {"batch_size", std::to_string(c.batch_size)},
      {"steps", std::to_string(c.steps)},
      {"learning_rate", fmt(c.learning_rate)},
      {"lr_decay_steps", std::to_string(c.lr_decay_steps)},
      {"adam_beta1", fmt(c.adam_beta1)},
      {"adam_beta2", fmt(c.adam_beta2)},
      {"adam_eps", fmt(c.adam_eps)},
      {"seed", std::to_string(c.seed)},
      {"checkpoint_every", std::to_string(c.checkpoint_every)},
      {"gamma_adv", fmt(c.weights.gamma_adv)},
      {"gamma_neg", fmt(c.weights.gamma_neg)},
      {"gamma_i2t", fmt(c.weights.gamma_i2t)},
      {"temperature", fmt(c.weights.temperature)},
      {"alpha_mix", format_mix(c.mix)},
      {"perlin.frequency", fmt(a.perlin.base_frequency)},
      {"perlin.octaves", std::to_string(a.perlin.octaves)},
      {"perlin.persistence", fmt(a.perlin.persistence)},
      {"gaussian.sigma_min", fmt(a.gaussian.sigma_min)},
      {"gaussian.sigma_max", fmt(a.gaussian.sigma_max)},
      {"circle.radius_min", fmt(a.circle.radius_min)},
      {"circle.radius_max", fmt(a.circle.radius_max)},
      {"scale_shift.scale_min", fmt(a.scale_shift.scale_min)},
      {"scale_shift.scale_max", fmt(a.scale_shift.scale_max)},
      {"aug.text_dropout", fmt(c.augment.text_dropout)},
      {"aug.crop_min", fmt(c.augment.crop_min_fraction)},
      {"aug.flip", fmt(c.augment.flip_probability)},
      {"aug.brightness", fmt(c.augment.brightness)},
      {"aug.contrast", fmt(c.augment.contrast)},
      {"aug.saturation", fmt(c.augment.saturation)},
      {"aug.grayscale", fmt(c.augment.grayscale_probability)},
      {"model.image_size", std::to_string(c.model.image_height)},
      {"model.pyramid_depth", std::to_string(c.model.pyramid_depth)},
      {"model.stride", std::to_string(c.model.stride)},
      {"model.encoder_widths", widths},
      {"model.decoder_width", std::to_string(c.model.decoder_width)},
      {"model.attenuation", net::attenuation_name(c.model.attenuation)},
      {"model.embed_dim", std::to_string(c.model.embed_dim)},
      {"model.attention_dim", std::to_string(c.model.attention_dim)},
  };
}

std::string to_text(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

TrainConfig toy_preset() {
  TrainConfig c;
  c.batch_size = 16;
  c.steps = 3000;
  c.learning_rate = 1e-3;
  c.lr_decay_steps = 2000;
  c.model.encoder_widths = {16, 32, 64, 64};
  c.model.decoder_width = 32;
  c.augment.flip_probability = 0.5;
  // Flat gray backgrounds leave smooth alpha unidentifiable off the shapes;
  // binary maps show the decoder unmixed pixels like the ones seen at test time.
  c.mix = parse_mix("perlin:0.25,gaussian_pair:0.25,circle:0.25,scale_shift:0.25", c.mix.params);
  return c;
}

}  // namespace gbs::workbench
