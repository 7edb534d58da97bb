#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gbs/alphagen.hpp"
#include "gbs/grid.hpp"

// Synthetic separation batches built from unlabeled image + caption pairs.
namespace gbs::blend {

using Tokens = std::vector<std::string>;

// Whitespace tokenization.
Tokens tokenize(const std::string& text);
std::string join(const Tokens& tokens);

struct ImageTextPair {
  std::string id;
  Image image;
  Tokens text;
};

struct AugmentationSpec {
  double text_dropout = 0.0;
  int target_height = 64;
  int target_width = 64;
  // Crop side ~ U[crop_min_fraction, 1] * image side, never below
  // min_crop_size pixels. 1.0 disables cropping.
  double crop_min_fraction = 1.0;
  int min_crop_size = 8;
  double flip_probability = 0.0;
  double brightness = 0.0;  // factor ~ U[1 - b, 1 + b]
  double contrast = 0.0;
  double saturation = 0.0;
  double grayscale_probability = 0.0;
  uint64_t seed = 0;
};

// Rec. 601 luma weights used by grayscale conversion.
inline constexpr double kLumaR = 0.299;
inline constexpr double kLumaG = 0.587;
inline constexpr double kLumaB = 0.114;

Image blend_images(const Image& image_a, const Image& image_b, const AlphaMap& alpha);

// Uniform draw among batch members other than index_a / index_b whose text
// differs from both of theirs and shares the fewest tokens with them:
// candidates in index order, pick Rng(seed).below(count).
Tokens sample_negative_text(const std::vector<ImageTextPair>& batch, std::size_t index_a,
                            std::size_t index_b, uint64_t seed);

// Token i is kept iff Rng(spec.seed).uniform() >= p on its draw (drawn in
// order); if nothing survives, token Rng.below(n) (next draw) is kept.
Tokens augment_text(const Tokens& tokens, const AugmentationSpec& spec);

Image flip_horizontal(const Image& image);
Image to_grayscale(const Image& image);
// Bilinear resize with pixel-center alignment.
Image resize_bilinear(const Image& image, int height, int width);
Image augment_image(const Image& image, const AugmentationSpec& spec);

// Image a, resized per the placement, on a zero canvas of the given size.
Image paste_scaled(const Image& image, const alphagen::Placement& placement, int height, int width);

struct BlendedSample {
  std::size_t index_a = 0;  // into TrainingBatch::images / texts
  std::size_t index_b = 0;
  Image source_a;  // image a as blended (after scale_shift placement)
  Image blended;
  AlphaMap alpha;
  alphagen::Scheme scheme = alphagen::Scheme::kPerlin;
  Tokens text_a;
  Tokens text_b;
  Tokens text_concat;
  Tokens text_neg;
};

struct TrainingBatch {
  std::vector<std::string> ids;
  std::vector<Image> images;  // augmented, non-blended
  std::vector<Tokens> texts;  // augmented
  std::vector<BlendedSample> samples;
};

// Disjoint random pairing of the inputs, one blended sample per pair.
// Streams: pairing Rng(derive_seed(seed, 0)); image/text augmentation
// derive_seed(derive_seed(seed, 1 | 2), item); alphas gen_batch with
// derive_seed(seed, 3); negatives derive_seed(derive_seed(seed, 4), sample).
TrainingBatch make_training_batch(const std::vector<ImageTextPair>& pairs,
                                  const alphagen::BatchMixSpec& mix, const AugmentationSpec& aug,
                                  uint64_t seed);

// Pairing permutation used by make_training_batch.
std::vector<std::size_t> pairing_permutation(std::size_t count, uint64_t seed);

}  // namespace gbs::blend
