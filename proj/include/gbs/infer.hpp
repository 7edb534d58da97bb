#pragma once

#include <vector>

#include "gbs/blend.hpp"
#include "gbs/net.hpp"

// Test-time heatmaps and their fusion.
namespace gbs::infer {

// Floor applied to both inputs of a geometric mean.
inline constexpr double kFuseEps = 1e-6;

// Pixel box [x_min, x_max) x [y_min, y_max).
struct ScoredBox {
  int x_min = 0, y_min = 0, x_max = 0, y_max = 0;
  double score = 1.0;
};

template <typename T>
Heatmap heatmap_gbs(const net::GbsModel<T>& model, const Image& image, const blend::Tokens& phrase);

// max over blocks of cos+(W^i, E^i[p]), each upscaled (nearest) to the
// resolution of E^n.
template <typename T>
Heatmap heatmap_i2t(const net::GbsModel<T>& model, const Image& image, const blend::Tokens& phrase);

// Same map from an already computed pyramid and per-block text vectors.
template <typename T>
Heatmap direct_alignment_map(const std::vector<ad::Var<T>>& pyramid, const std::vector<ad::Var<T>>& text,
                             int stride);

// sqrt(max(a, eps) * max(b, eps)) per pixel.
Heatmap fuse_geometric(const Heatmap& a, const Heatmap& b);

template <typename T>
Heatmap heatmap_fused(const net::GbsModel<T>& model, const Image& image, const blend::Tokens& phrase);

// Max score over the boxes covering each pixel, 0 where uncovered.
Heatmap boxes_to_heatmap(const std::vector<ScoredBox>& boxes, int height, int width);

// Detector / model ensemble; same math as fuse_geometric.
Heatmap ensemble(const Heatmap& model_map, const Heatmap& detector_map);

}  // namespace gbs::infer
