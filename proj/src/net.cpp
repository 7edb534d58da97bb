#include "gbs/net.hpp"

#include <cmath>
#include <sstream>

#include "gbs/rng.hpp"

namespace gbs::net {

std::string attenuation_name(Attenuation a) {
  switch (a) {
    case Attenuation::kDistance: return "distance";
    case Attenuation::kProjection: return "projection";
    case Attenuation::kAttention: return "attention";
    case Attenuation::kDist2Atten: return "dist2atten";
    case Attenuation::kCosine: return "cosine";
  }
  return "unknown";
}

Attenuation parse_attenuation(const std::string& name) {
  if (name == "distance") return Attenuation::kDistance;
  if (name == "projection") return Attenuation::kProjection;
  if (name == "attention") return Attenuation::kAttention;
  if (name == "dist2atten" || name == "dist2Atten") return Attenuation::kDist2Atten;
  if (name == "cosine") return Attenuation::kCosine;
  throw Error(ErrorKind::kConfig, "unknown attenuation variant: " + name);
}

bool is_scalar(Attenuation a) { return a == Attenuation::kDist2Atten || a == Attenuation::kCosine; }

// ---------------------------------------------------------------------------
// ModelConfig

int ModelConfig::block_height(int i) const {
  int side = image_height;
  for (int s = 0; s < stages() - i; ++s) side /= stride;
  return side;
}

int ModelConfig::block_width(int i) const {
  int side = image_width;
  for (int s = 0; s < stages() - i; ++s) side /= stride;
  return side;
}

void ModelConfig::validate() const {
  GBS_CHECK(pyramid_depth >= 1, kConfig, "pyramid depth must be >= 1");
  GBS_CHECK(stride >= 2, kConfig, "pooling stride must be >= 2");
  GBS_CHECK(stages() >= pyramid_depth, kConfig, "pyramid deeper than the encoder");
  GBS_CHECK(decoder_width >= 1 && embed_dim >= 1 && attention_dim >= 1, kConfig,
            "widths must be positive");
  for (int w : encoder_widths) GBS_CHECK(w >= 1, kConfig, "encoder widths must be positive");
  long total = 1;
  for (int s = 1; s < stages(); ++s) total *= stride;
  GBS_CHECK(image_height % total == 0 && image_width % total == 0, kShape,
            "image resolution not divisible by the cumulative encoder stride");
}

namespace {

std::string join_ints(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

std::vector<int> split_ints(const std::string& s) {
  std::vector<int> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(std::stoi(item));
  return out;
}

}  // namespace

std::string ModelConfig::to_text() const {
  std::ostringstream out;
  out << "image_height=" << image_height << "\n"
      << "image_width=" << image_width << "\n"
      << "pyramid_depth=" << pyramid_depth << "\n"
      << "stride=" << stride << "\n"
      << "encoder_widths=" << join_ints(encoder_widths) << "\n"
      << "decoder_width=" << decoder_width << "\n"
      << "attenuation=" << attenuation_name(attenuation) << "\n"
      << "embed_dim=" << embed_dim << "\n"
      << "attention_dim=" << attention_dim << "\n"
      << "encoder_bias=" << encoder_bias << "\n"
      << "decoder_bias=" << decoder_bias << "\n"
      << "final_squash=" << final_squash << "\n"
      << "vocabulary=";
  for (std::size_t i = 0; i < vocabulary.size(); ++i) out << (i ? " " : "") << vocabulary[i];
  out << "\n";
  return out.str();
}

ModelConfig ModelConfig::from_text(const std::string& text) {
  ModelConfig c;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    GBS_CHECK(eq != std::string::npos, kCheckpoint, "malformed model config line: " + line);
    const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    try {
      if (key == "image_height") c.image_height = std::stoi(value);
      else if (key == "image_width") c.image_width = std::stoi(value);
      else if (key == "pyramid_depth") c.pyramid_depth = std::stoi(value);
      else if (key == "stride") c.stride = std::stoi(value);
      else if (key == "encoder_widths") c.encoder_widths = split_ints(value);
      else if (key == "decoder_width") c.decoder_width = std::stoi(value);
      else if (key == "attenuation") c.attenuation = parse_attenuation(value);
      else if (key == "embed_dim") c.embed_dim = std::stoi(value);
      else if (key == "attention_dim") c.attention_dim = std::stoi(value);
      else if (key == "encoder_bias") c.encoder_bias = value == "1";
      else if (key == "decoder_bias") c.decoder_bias = value == "1";
      else if (key == "final_squash") c.final_squash = value == "1";
      else if (key == "vocabulary") {
        c.vocabulary.clear();
        std::istringstream words(value);
        std::string w;
        while (words >> w) c.vocabulary.push_back(w);
      } else throw Error(ErrorKind::kCheckpoint, "unknown model config key: " + key);
    } catch (const std::invalid_argument&) {
      throw Error(ErrorKind::kCheckpoint, "bad value for model config key " + key);
    }
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Free functions

template <typename T>
Var<T> attenuate(const Var<T>& block, const Var<T>& text_vec, Attenuation variant) {
  GBS_CHECK(block.value().rank() == 3 && text_vec.value().rank() == 1 && block.dim(0) == text_vec.dim(0),
            kShape, "attenuate: block channels must match the text vector");
  switch (variant) {
    case Attenuation::kDistance: {
      auto gate = ad::distance_gate(ad::normalize_channels(block), ad::normalize(text_vec));
      return ad::mul(gate, block);
    }
    case Attenuation::kProjection:
      return ad::scale_by_map(block, ad::relu(ad::cosine_map(block, text_vec)));
    case Attenuation::kDist2Atten:
      return ad::exp(ad::scale(ad::cosine_map(block, text_vec), T(-1)));
    case Attenuation::kCosine:
      return ad::relu(ad::cosine_map(block, text_vec));
    case Attenuation::kAttention:
      break;
  }
  throw Error(ErrorKind::kConfig, "attenuate: the attention variant needs model parameters");
}

template <typename T>
Var<T> image_tensor(const Image& image) {
  Tensor<T> t({Image::kChannels, image.height(), image.width()});
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(image.values()[i]);
  return ad::constant(std::move(t));
}

template <typename T>
Heatmap to_heatmap(const Var<T>& map) {
  GBS_CHECK(map.value().rank() == 3 && map.dim(0) == 1, kShape, "to_heatmap: expects [1, H, W]");
  Heatmap h(map.dim(1), map.dim(2));
  for (std::size_t i = 0; i < h.size(); ++i) h[i] = static_cast<double>(map.value()[i]);
  return h;
}

// ---------------------------------------------------------------------------
// GbsModel

namespace {

template <typename T>
Tensor<T> random_normal(std::vector<int> shape, double stddev, uint64_t seed) {
  Tensor<T> t(std::move(shape));
  Rng rng(seed);
  for (auto& v : t.data) v = static_cast<T>(rng.normal() * stddev);
  return t;
}

}  // namespace

template <typename T>
GbsModel<T>::GbsModel(ModelConfig config, uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  for (std::size_t i = 0; i < config_.vocabulary.size(); ++i)
    vocab_index_.emplace(config_.vocabulary[i], static_cast<int>(i) + 1);

  uint64_t counter = 0;
  auto next_seed = [&] { return derive_seed(seed, counter++); };
  const int n = config_.pyramid_depth;

  int in_ch = Image::kChannels;
  for (int s = 0; s < config_.stages(); ++s) {
    const int out_ch = config_.encoder_widths[s];
    const std::string prefix = "encoder/stage" + std::to_string(s);
    enc_w_.push_back(add_param(prefix + "/weight",
                               random_normal<T>({out_ch, in_ch, 3, 3}, std::sqrt(2.0 / (in_ch * 9)), next_seed())));
    enc_b_.push_back(config_.encoder_bias ? add_param(prefix + "/bias", Tensor<T>({out_ch})) : Var<T>());
    in_ch = out_ch;
  }

  const int vocab_rows = static_cast<int>(config_.vocabulary.size()) + 1;
  embedding_ = add_param("text/embedding", random_normal<T>({vocab_rows, config_.embed_dim}, 1.0, next_seed()));
  for (int i = 1; i <= n; ++i) {
    const int ch = config_.block_channels(i);
    const std::string prefix = "text/projection" + std::to_string(i);
    proj_w_.push_back(add_param(prefix + "/weight",
                                random_normal<T>({ch, config_.embed_dim}, std::sqrt(1.0 / config_.embed_dim), next_seed())));
    proj_b_.push_back(add_param(prefix + "/bias", Tensor<T>({ch})));
  }

  if (config_.attenuation == Attenuation::kAttention) {
    for (int i = 1; i <= n; ++i) {
      const int ch = config_.block_channels(i);
      const std::string prefix = "attention/block" + std::to_string(i);
      const double s = std::sqrt(1.0 / (2 * ch));
      AttentionBlock a;
      a.query = add_param(prefix + "/query", random_normal<T>({config_.attention_dim, 2 * ch}, s, next_seed()));
      a.key = add_param(prefix + "/key", random_normal<T>({config_.attention_dim, 2 * ch}, s, next_seed()));
      a.value = add_param(prefix + "/value", random_normal<T>({ch, 2 * ch}, s, next_seed()));
      attention_.push_back(a);
    }
  }

  const int w = config_.decoder_width;
  for (int i = 1; i <= n; ++i) {
    const int in = conditioned_channels(i) + (i > 1 ? w : 0);
    const std::string prefix = "decoder/block" + std::to_string(i);
    ResidualBlock b;
    b.conv_a_w = add_param(prefix + "/conv_a/weight", random_normal<T>({w, in, 3, 3}, std::sqrt(2.0 / (in * 9)), next_seed()));
    b.conv_b_w = add_param(prefix + "/conv_b/weight", random_normal<T>({w, w, 3, 3}, std::sqrt(1.0 / (w * 9)), next_seed()));
    b.skip_w = add_param(prefix + "/skip/weight", random_normal<T>({w, in, 1, 1}, std::sqrt(1.0 / in), next_seed()));
    if (config_.decoder_bias) {
      b.conv_a_b = add_param(prefix + "/conv_a/bias", Tensor<T>({w}));
      b.conv_b_b = add_param(prefix + "/conv_b/bias", Tensor<T>({w}));
      b.skip_b = add_param(prefix + "/skip/bias", Tensor<T>({w}));
    }
    decoder_.push_back(b);
  }
  head_w_ = add_param("decoder/head/weight", random_normal<T>({1, w, 1, 1}, std::sqrt(1.0 / w), next_seed()));
  if (config_.decoder_bias) head_b_ = add_param("decoder/head/bias", Tensor<T>({1}));
}

template <typename T>
Var<T> GbsModel<T>::add_param(const std::string& name, Tensor<T> init) {
  auto v = ad::parameter(std::move(init));
  params_.push_back({name, v});
  return v;
}

template <typename T>
Var<T> GbsModel<T>::parameter(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return p.value;
  throw Error(ErrorKind::kConfig, "no parameter named " + name);
}

template <typename T>
std::size_t GbsModel<T>::parameter_count() const {
  std::size_t total = 0;
  for (const auto& p : params_) total += p.value.numel();
  return total;
}

template <typename T>
void GbsModel<T>::zero_grad() {
  for (auto& p : params_) p.value.zero_grad();
}

template <typename T>
int GbsModel<T>::conditioned_channels(int block_index) const {
  return is_scalar(config_.attenuation) ? 1 : config_.block_channels(block_index);
}

template <typename T>
Var<T> GbsModel<T>::conv(const Var<T>& x, const Var<T>& w, const Var<T>& b) const {
  return ad::conv2d(x, w, b);
}

template <typename T>
typename GbsModel<T>::Pyramid GbsModel<T>::encode(const Var<T>& image) const {
  GBS_CHECK(image.value().rank() == 3 && image.dim(0) == Image::kChannels, kShape,
            "encode: expects a 3-channel image");
  GBS_CHECK(image.dim(1) == config_.image_height && image.dim(2) == config_.image_width, kShape,
            "encode: image is not at the configured resolution");
  std::vector<Var<T>> stages;
  Var<T> x = image;
  for (int s = 0; s < config_.stages(); ++s) {
    if (s > 0) x = ad::max_pool(x, config_.stride);
    x = ad::relu(conv(x, enc_w_[s], enc_b_[s]));
    stages.push_back(x);
  }
  Pyramid pyramid;
  for (int i = 1; i <= config_.pyramid_depth; ++i) pyramid.push_back(stages[config_.stages() - i]);
  return pyramid;
}

template <typename T>
std::vector<int> GbsModel<T>::token_rows(const Tokens& tokens) const {
  std::vector<int> rows;
  for (const auto& t : tokens) {
    auto it = vocab_index_.find(t);
    rows.push_back(it == vocab_index_.end() ? 0 : it->second);
  }
  return rows;
}

template <typename T>
Var<T> GbsModel<T>::embed_text(const Tokens& tokens) const {
  GBS_CHECK(!tokens.empty(), kConfig, "embed_text: empty token sequence");
  return ad::gather_rows(embedding_, token_rows(tokens));
}

template <typename T>
Var<T> GbsModel<T>::project_and_pool(const Var<T>& sequence, int block_index) const {
  GBS_CHECK(block_index >= 1 && block_index <= config_.pyramid_depth, kConfig,
            "project_and_pool: block index out of range");
  return ad::mean_rows(ad::linear_rows(sequence, proj_w_[block_index - 1], proj_b_[block_index - 1]));
}

template <typename T>
std::vector<Var<T>> GbsModel<T>::text_vectors(const Tokens& tokens) const {
  auto seq = embed_text(tokens);
  std::vector<Var<T>> out;
  for (int i = 1; i <= config_.pyramid_depth; ++i) out.push_back(project_and_pool(seq, i));
  return out;
}

template <typename T>
Var<T> GbsModel<T>::attenuate_block(const Var<T>& block, const Var<T>& text_vec, int block_index) const {
  if (config_.attenuation != Attenuation::kAttention) return attenuate(block, text_vec, config_.attenuation);
  // Single-head self-attention over pixels of cat(E, tiled W).
  const auto& a = attention_[block_index - 1];
  const int ch = block.dim(0), h = block.dim(1), w = block.dim(2);
  auto x = ad::reshape(ad::concat_channels(block, ad::tile(text_vec, h, w)), {2 * ch, h * w});
  auto q = ad::matmul(a.query, x);
  auto k = ad::matmul(a.key, x);
  auto v = ad::matmul(a.value, x);
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(config_.attention_dim));
  auto weights = ad::softmax_rows(ad::scale(ad::matmul(ad::transpose(q), k), inv_sqrt));
  return ad::reshape(ad::matmul(v, ad::transpose(weights)), {ch, h, w});
}

template <typename T>
typename GbsModel<T>::Pyramid GbsModel<T>::condition(const Pyramid& pyramid,
                                                     const std::vector<Var<T>>& text) const {
  GBS_CHECK(pyramid.size() == text.size(), kShape, "condition: pyramid / text depth mismatch");
  Pyramid out;
  for (std::size_t i = 0; i < pyramid.size(); ++i)
    out.push_back(attenuate_block(pyramid[i], text[i], static_cast<int>(i) + 1));
  return out;
}

template <typename T>
Var<T> GbsModel<T>::run_block(const ResidualBlock& b, const Var<T>& x) const {
  auto a = ad::relu(conv(x, b.conv_a_w, b.conv_a_b));
  return ad::relu(ad::add(conv(x, b.skip_w, b.skip_b), conv(a, b.conv_b_w, b.conv_b_b)));
}

template <typename T>
Var<T> GbsModel<T>::decode(const Pyramid& cond) const {
  const int n = config_.pyramid_depth;
  GBS_CHECK(static_cast<int>(cond.size()) == n, kShape, "decode: pyramid depth mismatch");
  for (int i = 1; i <= n; ++i) {
    const auto& c = cond[i - 1];
    GBS_CHECK(c.value().rank() == 3 && c.dim(0) == conditioned_channels(i) &&
                  c.dim(1) == config_.block_height(i) && c.dim(2) == config_.block_width(i),
              kShape, "decode: conditioned block " + std::to_string(i) + " has the wrong shape");
  }
  Var<T> out = run_block(decoder_[0], cond[0]);
  for (int i = 2; i <= n; ++i)
    out = run_block(decoder_[i - 1], ad::concat_channels(cond[i - 1], ad::upsample_nearest(out, config_.stride)));
  auto logits = conv(out, head_w_, head_b_);
  return config_.final_squash ? ad::sigmoid(logits) : logits;
}

template <typename T>
Var<T> GbsModel<T>::decode_unconditioned(const Pyramid& pyramid) const {
  if (!is_scalar(config_.attenuation)) return decode(pyramid);
  Pyramid ones;
  for (const auto& block : pyramid)
    ones.push_back(ad::constant(Tensor<T>({1, block.dim(1), block.dim(2)}, T(1))));
  return decode(ones);
}

template <typename T>
Var<T> GbsModel<T>::forward(const Var<T>& image, const Tokens& tokens) const {
  return decode(condition(encode(image), text_vectors(tokens)));
}

template Var<float> attenuate<float>(const Var<float>&, const Var<float>&, Attenuation);
template Var<double> attenuate<double>(const Var<double>&, const Var<double>&, Attenuation);
template Var<float> image_tensor<float>(const Image&);
template Var<double> image_tensor<double>(const Image&);
template Heatmap to_heatmap<float>(const Var<float>&);
template Heatmap to_heatmap<double>(const Var<double>&);
template class GbsModel<float>;
template class GbsModel<double>;

}  // namespace gbs::net
