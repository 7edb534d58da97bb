#include "gbs/losses.hpp"

namespace gbs::losses {

namespace {

template <typename T>
ad::Tensor<T> grid_tensor(const Grid& g) {
  ad::Tensor<T> t({1, g.height(), g.width()});
  for (std::size_t i = 0; i < g.size(); ++i) t[i] = static_cast<T>(g[i]);
  return t;
}

template <typename T>
ad::Tensor<T> filled_like(const Var<T>& v, T value) {
  return ad::Tensor<T>(v.shape(), value);
}

}  // namespace

double mse(const Grid& x, const Grid& y) {
  GBS_CHECK(x.same_shape(y), kShape, "mse: dimension mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += (x[i] - y[i]) * (x[i] - y[i]);
  return acc / static_cast<double>(x.size());
}

template <typename T>
Var<T> mse(const Var<T>& heatmap, const Grid& target) {
  return ad::mse(heatmap, grid_tensor<T>(target));
}

Grid native_alpha(const Grid& alpha, int heatmap_height, int heatmap_width) {
  GBS_CHECK(alpha.height() % heatmap_height == 0 && alpha.width() % heatmap_width == 0 &&
                alpha.height() / heatmap_height == alpha.width() / heatmap_width,
            kShape, "alpha map is not an integer multiple of the heatmap resolution");
  return downsample_area(alpha, alpha.height() / heatmap_height);
}

template <typename T>
Var<T> separation_loss(const Var<T>& heatmap_a, const Var<T>& heatmap_b, const Grid& alpha_native) {
  Grid complement = alpha_native;
  for (auto& v : complement.values()) v = 1.0 - v;
  return ad::add(mse(heatmap_a, alpha_native), mse(heatmap_b, complement));
}

template <typename T>
Var<T> adversarial_loss(const Var<T>& heatmap_unconditioned) {
  return ad::mse(heatmap_unconditioned, filled_like(heatmap_unconditioned, T(0.5)));
}

template <typename T>
Var<T> negative_loss(const Var<T>& heatmap_negative) {
  return ad::mse(heatmap_negative, filled_like(heatmap_negative, T(0)));
}

template <typename T>
Var<T> loss_sep(const net::GbsModel<T>& model, const blend::BlendedSample& sample) {
  const auto& cfg = model.config();
  auto pyramid = model.encode(net::image_tensor<T>(sample.blended));
  auto h_a = model.decode(model.condition(pyramid, model.text_vectors(sample.text_a)));
  auto h_b = model.decode(model.condition(pyramid, model.text_vectors(sample.text_b)));
  return separation_loss(h_a, h_b, native_alpha(sample.alpha, cfg.heatmap_height(), cfg.heatmap_width()));
}

template <typename T>
Var<T> loss_adv(const net::GbsModel<T>& model, const Image& blended) {
  return adversarial_loss(model.decode_unconditioned(model.encode(net::image_tensor<T>(blended))));
}

template <typename T>
Var<T> loss_neg(const net::GbsModel<T>& model, const Image& blended, const blend::Tokens& text_neg) {
  auto pyramid = model.encode(net::image_tensor<T>(blended));
  return negative_loss(model.decode(model.condition(pyramid, model.text_vectors(text_neg))));
}

template <typename T>
Var<T> similarity_matrix(const std::vector<std::vector<Var<T>>>& pyramids,
                         const std::vector<std::vector<Var<T>>>& texts) {
  const std::size_t b = pyramids.size();
  GBS_CHECK(b == texts.size() && b >= 1, kShape, "similarity_matrix: batch sizes differ");
  std::vector<Var<T>> entries;
  entries.reserve(b * b);
  for (std::size_t k = 0; k < b; ++k) {
    for (std::size_t m = 0; m < b; ++m) {
      GBS_CHECK(pyramids[m].size() == texts[k].size(), kShape, "similarity_matrix: depth mismatch");
      std::vector<Var<T>> per_block;
      for (std::size_t i = 0; i < texts[k].size(); ++i) {
        const auto& e = pyramids[m][i];
        const auto& w = texts[k][i];
        auto weights = ad::relu(ad::cosine_map(e, w));
        per_block.push_back(ad::cosine(ad::weighted_pixel_sum(e, weights), w));
      }
      entries.push_back(ad::max_of(per_block));
    }
  }
  const int n = static_cast<int>(b);
  return ad::reshape(ad::stack(entries), {n, n});
}

template <typename T>
Var<T> loss_i2t(const Var<T>& z, double temperature) {
  GBS_CHECK(temperature > 0.0, kParameter, "loss_i2t: temperature must be positive");
  return ad::symmetric_cross_entropy(z, static_cast<T>(temperature));
}

template <typename T>
Var<T> loss_i2t(const net::GbsModel<T>& model, const std::vector<Image>& images,
                const std::vector<blend::Tokens>& texts, double temperature) {
  std::vector<std::vector<Var<T>>> pyramids, vectors;
  for (const auto& image : images) pyramids.push_back(model.encode(net::image_tensor<T>(image)));
  for (const auto& text : texts) vectors.push_back(model.text_vectors(text));
  return loss_i2t(similarity_matrix(pyramids, vectors), temperature);
}

template <typename T>
Var<T> loss_total(const LossParts<T>& parts, const LossWeights& weights) {
  Var<T> total = parts.sep;
  auto accumulate = [&](const Var<T>& part, double gamma) {
    if (!part.defined()) return;
    auto term = ad::scale(part, static_cast<T>(gamma));
    total = total.defined() ? ad::add(total, term) : term;
  };
  accumulate(parts.adv, weights.gamma_adv);
  accumulate(parts.neg, weights.gamma_neg);
  accumulate(parts.i2t, weights.gamma_i2t);
  GBS_CHECK(total.defined(), kConfig, "loss_total: no loss terms");
  return total;
}

double loss_total(double sep, double adv, double neg, double i2t, const LossWeights& weights) {
  return sep + weights.gamma_adv * adv + weights.gamma_neg * neg + weights.gamma_i2t * i2t;
}

template <typename T>
LossParts<T> batch_losses(const net::GbsModel<T>& model, const blend::TrainingBatch& batch,
                          const LossWeights& weights) {
  const auto& cfg = model.config();
  GBS_CHECK(!batch.samples.empty(), kConfig, "batch_losses: empty batch");
  const T inv = T(1) / static_cast<T>(batch.samples.size());

  std::vector<Var<T>> sep, adv, neg;
  for (const auto& s : batch.samples) {
    auto pyramid = model.encode(net::image_tensor<T>(s.blended));
    auto h_a = model.decode(model.condition(pyramid, model.text_vectors(s.text_a)));
    auto h_b = model.decode(model.condition(pyramid, model.text_vectors(s.text_b)));
    sep.push_back(separation_loss(h_a, h_b, native_alpha(s.alpha, cfg.heatmap_height(), cfg.heatmap_width())));
    if (weights.gamma_adv != 0.0) adv.push_back(adversarial_loss(model.decode_unconditioned(pyramid)));
    if (weights.gamma_neg != 0.0)
      neg.push_back(negative_loss(model.decode(model.condition(pyramid, model.text_vectors(s.text_neg)))));
  }
  auto average = [&](const std::vector<Var<T>>& terms) -> Var<T> {
    if (terms.empty()) return Var<T>();
    return ad::scale(ad::sum(ad::stack(terms)), inv);
  };

  LossParts<T> parts;
  parts.sep = average(sep);
  parts.adv = average(adv);
  parts.neg = average(neg);
  if (weights.gamma_i2t != 0.0) parts.i2t = loss_i2t(model, batch.images, batch.texts, weights.temperature);
  return parts;
}

#define GBS_INSTANTIATE(T)                                                                          \
  template Var<T> mse<T>(const Var<T>&, const Grid&);                                               \
  template Var<T> separation_loss<T>(const Var<T>&, const Var<T>&, const Grid&);                    \
  template Var<T> adversarial_loss<T>(const Var<T>&);                                               \
  template Var<T> negative_loss<T>(const Var<T>&);                                                  \
  template Var<T> loss_sep<T>(const net::GbsModel<T>&, const blend::BlendedSample&);                \
  template Var<T> loss_adv<T>(const net::GbsModel<T>&, const Image&);                               \
  template Var<T> loss_neg<T>(const net::GbsModel<T>&, const Image&, const blend::Tokens&);         \
  template Var<T> similarity_matrix<T>(const std::vector<std::vector<Var<T>>>&,                     \
                                       const std::vector<std::vector<Var<T>>>&);                    \
  template Var<T> loss_i2t<T>(const Var<T>&, double);                                               \
  template Var<T> loss_i2t<T>(const net::GbsModel<T>&, const std::vector<Image>&,                   \
                              const std::vector<blend::Tokens>&, double);                           \
  template Var<T> loss_total<T>(const LossParts<T>&, const LossWeights&);                           \
  template LossParts<T> batch_losses<T>(const net::GbsModel<T>&, const blend::TrainingBatch&,       \
                                        const LossWeights&);

GBS_INSTANTIATE(float)
GBS_INSTANTIATE(double)

#undef GBS_INSTANTIATE

}  // namespace gbs::losses
