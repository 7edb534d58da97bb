#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "gbs/autograd.hpp"
#include "gbs/grid.hpp"

// The separation model: encoder -> text conditioning -> U-Net style decoder.
namespace gbs::net {

using ad::Tensor;
using ad::Var;
using Tokens = std::vector<std::string>;

enum class Attenuation { kDistance, kProjection, kAttention, kDist2Atten, kCosine };

std::string attenuation_name(Attenuation a);
Attenuation parse_attenuation(const std::string& name);
// Scalar variants emit a single-channel conditioned grid.
bool is_scalar(Attenuation a);

struct ModelConfig {
  int image_height = 64;
  int image_width = 64;
  int pyramid_depth = 2;  // n
  int stride = 2;         // r
  std::vector<int> encoder_widths{32, 64, 128, 256};
  int decoder_width = 64;
  Attenuation attenuation = Attenuation::kDistance;
  int embed_dim = 32;
  int attention_dim = 16;
  bool encoder_bias = true;
  bool decoder_bias = true;
  bool final_squash = true;
  std::vector<std::string> vocabulary;  // row i + 1 of the table; row 0 is OOV

  int stages() const { return static_cast<int>(encoder_widths.size()); }
  // Channels of pyramid block i (1 = coarsest).
  int block_channels(int i) const { return encoder_widths[stages() - i]; }
  // Spatial side of pyramid block i.
  int block_height(int i) const;
  int block_width(int i) const;
  int heatmap_height() const { return block_height(pyramid_depth); }
  int heatmap_width() const { return block_width(pyramid_depth); }

  void validate() const;
  std::string to_text() const;
  static ModelConfig from_text(const std::string& text);
  bool operator==(const ModelConfig&) const = default;
};

// Per-block attenuation A(E, W) for the parameter-free variants.
// distance:   exp(-|E_hat - W_hat|) * E     (per channel)
// projection: cos+(E, W) * E
// dist2Atten: exp(-cos(E, W))               (1 channel)
// cosine:     cos+(E, W)                    (1 channel)
template <typename T>
Var<T> attenuate(const Var<T>& block, const Var<T>& text_vec, Attenuation variant);

template <typename T>
Var<T> image_tensor(const Image& image);

template <typename T>
Heatmap to_heatmap(const Var<T>& map);

template <typename T>
struct NamedParameter {
  std::string name;
  Var<T> value;
};

template <typename T>
class GbsModel {
 public:
  using Pyramid = std::vector<Var<T>>;  // [E^1 .. E^n], E^1 coarsest

  GbsModel(ModelConfig config, uint64_t seed);

  const ModelConfig& config() const { return config_; }

  Pyramid encode(const Var<T>& image) const;
  // [s, embed_dim], one row per token; unknown tokens map to the OOV row.
  Var<T> embed_text(const Tokens& tokens) const;
  std::vector<int> token_rows(const Tokens& tokens) const;
  // W^i = mean_j P^i(W_j); block_index is 1-based.
  Var<T> project_and_pool(const Var<T>& sequence, int block_index) const;
  std::vector<Var<T>> text_vectors(const Tokens& tokens) const;

  // Attenuation of block i (1-based) with the configured variant.
  Var<T> attenuate_block(const Var<T>& block, const Var<T>& text_vec, int block_index) const;
  Pyramid condition(const Pyramid& pyramid, const std::vector<Var<T>>& text) const;

  // [1, H, W] heatmap at the resolution of E^n.
  Var<T> decode(const Pyramid& conditioned) const;
  Var<T> decode_unconditioned(const Pyramid& pyramid) const;
  Var<T> forward(const Var<T>& image, const Tokens& tokens) const;

  std::vector<NamedParameter<T>>& parameters() { return params_; }
  const std::vector<NamedParameter<T>>& parameters() const { return params_; }
  Var<T> parameter(const std::string& name) const;
  std::size_t parameter_count() const;
  void zero_grad();

 private:
  struct ResidualBlock {
    Var<T> conv_a_w, conv_a_b, conv_b_w, conv_b_b, skip_w, skip_b;
  };
  struct AttentionBlock {
    Var<T> query, key, value;
  };

  Var<T> add_param(const std::string& name, Tensor<T> init);
  Var<T> conv(const Var<T>& x, const Var<T>& w, const Var<T>& b) const;
  Var<T> run_block(const ResidualBlock& block, const Var<T>& x) const;
  int conditioned_channels(int block_index) const;

  ModelConfig config_;
  std::vector<NamedParameter<T>> params_;
  std::unordered_map<std::string, int> vocab_index_;

  std::vector<Var<T>> enc_w_, enc_b_;
  Var<T> embedding_;
  std::vector<Var<T>> proj_w_, proj_b_;
  std::vector<AttentionBlock> attention_;
  std::vector<ResidualBlock> decoder_;
  Var<T> head_w_, head_b_;
};

}  // namespace gbs::net
