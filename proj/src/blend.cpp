#include "gbs/blend.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "gbs/rng.hpp"

namespace gbs::blend {

Tokens tokenize(const std::string& text) {
  Tokens tokens;
  std::istringstream in(text);
  std::string word;
  while (in >> word) tokens.push_back(word);
  return tokens;
}

std::string join(const Tokens& tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out += ' ';
    out += t;
  }
  return out;
}

Image blend_images(const Image& image_a, const Image& image_b, const AlphaMap& alpha) {
  GBS_CHECK(image_a.same_shape(image_b), kShape, "blend_images: source images differ in size");
  GBS_CHECK(alpha.height() == image_a.height() && alpha.width() == image_a.width(), kShape,
            "blend_images: alpha map does not match image size");
  Image out(image_a.height(), image_a.width());
  for (int ch = 0; ch < Image::kChannels; ++ch)
    for (int r = 0; r < out.height(); ++r)
      for (int c = 0; c < out.width(); ++c) {
        const double a = alpha(r, c);
        out.at(ch, r, c) = a * image_a.at(ch, r, c) + (1.0 - a) * image_b.at(ch, r, c);
      }
  return out;
}

Tokens sample_negative_text(const std::vector<ImageTextPair>& batch, std::size_t index_a,
                            std::size_t index_b, uint64_t seed) {
  GBS_CHECK(index_a < batch.size() && index_b < batch.size(), kConfig,
            "sample_negative_text: index out of range");
  std::set<std::string> used(batch[index_a].text.begin(), batch[index_a].text.end());
  used.insert(batch[index_b].text.begin(), batch[index_b].text.end());
  auto overlap = [&](const Tokens& t) {
    return std::count_if(t.begin(), t.end(), [&](const std::string& w) { return used.count(w) > 0; });
  };
  std::vector<std::size_t> candidates;
  long fewest = std::numeric_limits<long>::max();
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (i == index_a || i == index_b) continue;
    if (batch[i].text == batch[index_a].text || batch[i].text == batch[index_b].text) continue;
    const long shared = overlap(batch[i].text);
    if (shared > fewest) continue;
    if (shared < fewest) candidates.clear();
    fewest = shared;
    candidates.push_back(i);
  }
  GBS_CHECK(!candidates.empty(), kConfig,
            "sample_negative_text: batch needs at least 3 distinct texts");
  Rng rng(seed);
  return batch[candidates[rng.below(candidates.size())]].text;
}

Tokens augment_text(const Tokens& tokens, const AugmentationSpec& spec) {
  GBS_CHECK(!tokens.empty(), kConfig, "augment_text: empty token sequence");
  if (spec.text_dropout <= 0.0) return tokens;
  Rng rng(spec.seed);
  Tokens kept;
  for (const auto& t : tokens)
    if (rng.uniform() >= spec.text_dropout) kept.push_back(t);
  if (kept.empty()) kept.push_back(tokens[rng.below(tokens.size())]);
  return kept;
}

Image flip_horizontal(const Image& image) {
  Image out(image.height(), image.width());
  for (int ch = 0; ch < Image::kChannels; ++ch)
    for (int r = 0; r < image.height(); ++r)
      for (int c = 0; c < image.width(); ++c) out.at(ch, r, c) = image.at(ch, r, image.width() - 1 - c);
  return out;
}

Image to_grayscale(const Image& image) {
  Image out(image.height(), image.width());
  for (int r = 0; r < image.height(); ++r)
    for (int c = 0; c < image.width(); ++c) {
      const double y = kLumaR * image.at(0, r, c) + kLumaG * image.at(1, r, c) + kLumaB * image.at(2, r, c);
      for (int ch = 0; ch < Image::kChannels; ++ch) out.at(ch, r, c) = y;
    }
  return out;
}

Image resize_bilinear(const Image& image, int height, int width) {
  if (image.height() == height && image.width() == width) return image;
  Image out(height, width);
  const double sy = static_cast<double>(image.height()) / height;
  const double sx = static_cast<double>(image.width()) / width;
  for (int r = 0; r < height; ++r) {
    const double fy = std::clamp((r + 0.5) * sy - 0.5, 0.0, image.height() - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, image.height() - 1);
    const double wy = fy - y0;
    for (int c = 0; c < width; ++c) {
      const double fx = std::clamp((c + 0.5) * sx - 0.5, 0.0, image.width() - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, image.width() - 1);
      const double wx = fx - x0;
      for (int ch = 0; ch < Image::kChannels; ++ch) {
        const double top = (1 - wx) * image.at(ch, y0, x0) + wx * image.at(ch, y0, x1);
        const double bottom = (1 - wx) * image.at(ch, y1, x0) + wx * image.at(ch, y1, x1);
        out.at(ch, r, c) = (1 - wy) * top + wy * bottom;
      }
    }
  }
  return out;
}

namespace {

Image crop(const Image& image, int top, int left, int height, int width) {
  Image out(height, width);
  for (int ch = 0; ch < Image::kChannels; ++ch)
    for (int r = 0; r < height; ++r)
      for (int c = 0; c < width; ++c) out.at(ch, r, c) = image.at(ch, top + r, left + c);
  return out;
}

double luma(const Image& image, int r, int c) {
  return kLumaR * image.at(0, r, c) + kLumaG * image.at(1, r, c) + kLumaB * image.at(2, r, c);
}

}  // namespace

Image augment_image(const Image& image, const AugmentationSpec& spec) {
  GBS_CHECK(spec.target_height > 0 && spec.target_width > 0, kConfig, "augment_image: bad target size");
  GBS_CHECK(image.height() >= spec.min_crop_size && image.width() >= spec.min_crop_size, kShape,
            "augment_image: image smaller than the minimum crop");
  Rng rng(spec.seed);
  Image out = image;

  if (spec.crop_min_fraction < 1.0) {
    const double frac = rng.uniform(spec.crop_min_fraction, 1.0);
    const int ch = std::clamp(static_cast<int>(std::lround(frac * image.height())), spec.min_crop_size,
                              image.height());
    const int cw = std::clamp(static_cast<int>(std::lround(frac * image.width())), spec.min_crop_size,
                              image.width());
    const int top = static_cast<int>(rng.below(static_cast<std::size_t>(image.height() - ch + 1)));
    const int left = static_cast<int>(rng.below(static_cast<std::size_t>(image.width() - cw + 1)));
    out = crop(out, top, left, ch, cw);
  }
  out = resize_bilinear(out, spec.target_height, spec.target_width);

  if (spec.flip_probability > 0.0 && rng.bernoulli(spec.flip_probability)) out = flip_horizontal(out);

  if (spec.brightness > 0.0) {
    const double f = rng.uniform(1.0 - spec.brightness, 1.0 + spec.brightness);
    for (auto& v : out.values()) v *= f;
  }
  if (spec.contrast > 0.0) {
    const double f = rng.uniform(1.0 - spec.contrast, 1.0 + spec.contrast);
    double mean_luma = 0.0;
    for (int r = 0; r < out.height(); ++r)
      for (int c = 0; c < out.width(); ++c) mean_luma += luma(out, r, c);
    mean_luma /= static_cast<double>(out.height()) * out.width();
    for (auto& v : out.values()) v = mean_luma + f * (v - mean_luma);
  }
  if (spec.saturation > 0.0) {
    const double f = rng.uniform(1.0 - spec.saturation, 1.0 + spec.saturation);
    for (int r = 0; r < out.height(); ++r)
      for (int c = 0; c < out.width(); ++c) {
        const double y = luma(out, r, c);
        for (int k = 0; k < Image::kChannels; ++k) out.at(k, r, c) = y + f * (out.at(k, r, c) - y);
      }
  }
  if (spec.grayscale_probability > 0.0 && rng.bernoulli(spec.grayscale_probability)) out = to_grayscale(out);

  for (auto& v : out.values()) v = std::clamp(v, 0.0, 1.0);
  return out;
}

Image paste_scaled(const Image& image, const alphagen::Placement& placement, int height, int width) {
  Image scaled = resize_bilinear(image, placement.rows, placement.cols);
  Image canvas(height, width, 0.0);
  for (int ch = 0; ch < Image::kChannels; ++ch)
    for (int r = 0; r < placement.rows; ++r) {
      const int y = placement.top + r;
      if (y < 0 || y >= height) continue;
      for (int c = 0; c < placement.cols; ++c) {
        const int x = placement.left + c;
        if (x >= 0 && x < width) canvas.at(ch, y, x) = scaled.at(ch, r, c);
      }
    }
  return canvas;
}

std::vector<std::size_t> pairing_permutation(std::size_t count, uint64_t seed) {
  std::vector<std::size_t> perm(count);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = count - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
  return perm;
}

TrainingBatch make_training_batch(const std::vector<ImageTextPair>& pairs,
                                  const alphagen::BatchMixSpec& mix, const AugmentationSpec& aug,
                                  uint64_t seed) {
  GBS_CHECK(pairs.size() >= 4, kConfig, "make_training_batch: need at least 4 pairs");
  GBS_CHECK(pairs.size() % 2 == 0, kConfig, "make_training_batch: pair count must be even");

  TrainingBatch batch;
  std::vector<ImageTextPair> augmented(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    AugmentationSpec image_spec = aug;
    image_spec.seed = derive_seed(derive_seed(seed, 1), i);
    AugmentationSpec text_spec = aug;
    text_spec.seed = derive_seed(derive_seed(seed, 2), i);
    augmented[i].id = pairs[i].id;
    augmented[i].image = augment_image(pairs[i].image, image_spec);
    augmented[i].text = augment_text(pairs[i].text, text_spec);
    batch.ids.push_back(pairs[i].id);
    batch.images.push_back(augmented[i].image);
    batch.texts.push_back(augmented[i].text);
  }

  const auto perm = pairing_permutation(pairs.size(), derive_seed(seed, 0));
  const std::size_t sample_count = pairs.size() / 2;
  const int height = aug.target_height, width = aug.target_width;
  auto alphas = alphagen::gen_batch_samples(mix, static_cast<int>(sample_count), derive_seed(seed, 3),
                                            height, width);

  for (std::size_t k = 0; k < sample_count; ++k) {
    BlendedSample s;
    s.index_a = perm[2 * k];
    s.index_b = perm[2 * k + 1];
    s.scheme = alphas[k].scheme;
    s.alpha = std::move(alphas[k].alpha);
    const Image& a = augmented[s.index_a].image;
    s.source_a = alphas[k].placement ? paste_scaled(a, *alphas[k].placement, height, width) : a;
    s.blended = blend_images(s.source_a, augmented[s.index_b].image, s.alpha);
    s.text_a = augmented[s.index_a].text;
    s.text_b = augmented[s.index_b].text;
    s.text_concat = s.text_a;
    s.text_concat.insert(s.text_concat.end(), s.text_b.begin(), s.text_b.end());
    s.text_neg = sample_negative_text(augmented, s.index_a, s.index_b, derive_seed(derive_seed(seed, 4), k));
    batch.samples.push_back(std::move(s));
  }
  return batch;
}

}  // namespace gbs::blend
