#include "gbs/infer.hpp"

#include <algorithm>
#include <cmath>

namespace gbs::infer {

template <typename T>
Heatmap heatmap_gbs(const net::GbsModel<T>& model, const Image& image, const blend::Tokens& phrase) {
  return net::to_heatmap(model.forward(net::image_tensor<T>(image), phrase));
}

template <typename T>
Heatmap direct_alignment_map(const std::vector<ad::Var<T>>& pyramid, const std::vector<ad::Var<T>>& text,
                             int stride) {
  GBS_CHECK(!pyramid.empty() && pyramid.size() == text.size(), kShape,
            "direct_alignment_map: pyramid / text depth mismatch");
  const auto& finest = pyramid.back();
  Heatmap out(finest.dim(1), finest.dim(2), 0.0);
  const int n = static_cast<int>(pyramid.size());
  for (int i = 0; i < n; ++i) {
    const Heatmap block = net::to_heatmap(ad::relu(ad::cosine_map(pyramid[i], text[i])));
    int factor = 1;
    for (int k = i + 1; k < n; ++k) factor *= stride;
    GBS_CHECK(block.height() * factor == out.height() && block.width() * factor == out.width(), kShape,
              "direct_alignment_map: blocks do not follow the stride relation");
    for (int r = 0; r < out.height(); ++r)
      for (int c = 0; c < out.width(); ++c) out(r, c) = std::max(out(r, c), block(r / factor, c / factor));
  }
  for (auto& v : out.values()) v = std::clamp(v, 0.0, 1.0);
  return out;
}

template <typename T>
Heatmap heatmap_i2t(const net::GbsModel<T>& model, const Image& image, const blend::Tokens& phrase) {
  auto pyramid = model.encode(net::image_tensor<T>(image));
  return direct_alignment_map(pyramid, model.text_vectors(phrase), model.config().stride);
}

Heatmap fuse_geometric(const Heatmap& a, const Heatmap& b) {
  GBS_CHECK(a.same_shape(b), kShape, "fuse_geometric: dimension mismatch");
  Heatmap out(a.height(), a.width());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::sqrt(std::max(a[i], kFuseEps) * std::max(b[i], kFuseEps));
  return out;
}

template <typename T>
Heatmap heatmap_fused(const net::GbsModel<T>& model, const Image& image, const blend::Tokens& phrase) {
  auto pyramid = model.encode(net::image_tensor<T>(image));
  auto text = model.text_vectors(phrase);
  Heatmap gbs = net::to_heatmap(model.decode(model.condition(pyramid, text)));
  return fuse_geometric(gbs, direct_alignment_map(pyramid, text, model.config().stride));
}

Heatmap boxes_to_heatmap(const std::vector<ScoredBox>& boxes, int height, int width) {
  Heatmap out(height, width, 0.0);
  for (const auto& b : boxes) {
    GBS_CHECK(b.x_min < b.x_max && b.y_min < b.y_max, kParameter, "boxes_to_heatmap: empty box");
    GBS_CHECK(b.x_min >= 0 && b.y_min >= 0 && b.x_max <= width && b.y_max <= height, kParameter,
              "boxes_to_heatmap: box outside the image");
    GBS_CHECK(b.score >= 0.0 && b.score <= 1.0, kParameter, "boxes_to_heatmap: score outside [0, 1]");
    for (int r = b.y_min; r < b.y_max; ++r)
      for (int c = b.x_min; c < b.x_max; ++c) out(r, c) = std::max(out(r, c), b.score);
  }
  return out;
}

Heatmap ensemble(const Heatmap& model_map, const Heatmap& detector_map) {
  return fuse_geometric(model_map, detector_map);
}

#define GBS_INSTANTIATE(T)                                                                              \
  template Heatmap heatmap_gbs<T>(const net::GbsModel<T>&, const Image&, const blend::Tokens&);         \
  template Heatmap heatmap_i2t<T>(const net::GbsModel<T>&, const Image&, const blend::Tokens&);         \
  template Heatmap heatmap_fused<T>(const net::GbsModel<T>&, const Image&, const blend::Tokens&);       \
  template Heatmap direct_alignment_map<T>(const std::vector<ad::Var<T>>&,                              \
                                           const std::vector<ad::Var<T>>&, int);

GBS_INSTANTIATE(float)
GBS_INSTANTIATE(double)

#undef GBS_INSTANTIATE

}  // namespace gbs::infer
