#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "gbs/autograd.hpp"
#include "gbs/grid.hpp"
#include "gbs/net.hpp"
#include "gbs/rng.hpp"

namespace gbs::testing {

inline Image random_image(int h, int w, Rng& rng) {
  Image img(h, w);
  for (auto& v : img.values()) v = rng.uniform();
  return img;
}

inline Grid random_grid(int h, int w, Rng& rng) {
  Grid g(h, w);
  for (auto& v : g.values()) v = rng.uniform();
  return g;
}

inline Image constant_image(int h, int w, double v) { return Image(h, w, v); }

// Small model: 16x16 input, four stages, two pyramid blocks (2x2 and 4x4).
inline net::ModelConfig tiny_config(net::Attenuation variant = net::Attenuation::kDistance) {
  net::ModelConfig c;
  c.image_height = c.image_width = 16;
  c.encoder_widths = {4, 6, 8, 8};
  c.decoder_width = 6;
  c.embed_dim = 5;
  c.attention_dim = 4;
  c.attenuation = variant;
  c.vocabulary = {"blue", "circle", "green", "red", "square", "triangle"};
  return c;
}

template <typename T>
ad::Tensor<T> random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  ad::Tensor<T> t(std::move(shape));
  for (auto& v : t.data) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

struct GradCheck {
  std::string parameter;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double relative_error = 0.0;
};

// |a - n| / max(|a|, |n|, floor)
inline double relative_error(double a, double n, double floor = 1e-6) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

// Central differences on `count` parameter entries drawn at random from the
// whole parameter vector of `model`.
inline std::vector<GradCheck> check_gradients(net::GbsModel<double>& model,
                                              const std::function<ad::Var<double>()>& loss, int count,
                                              uint64_t seed, double step = 1e-6) {
  model.zero_grad();
  ad::backward(loss());
  auto& params = model.parameters();
  std::size_t total = 0;
  for (const auto& p : params) total += p.value.numel();
  Rng rng(seed);
  std::vector<GradCheck> out;
  for (int k = 0; k < count; ++k) {
    std::size_t flat = rng.below(total);
    std::size_t which = 0;
    while (flat >= params[which].value.numel()) flat -= params[which++].value.numel();
    auto& var = params[which].value;
    GradCheck g;
    g.parameter = params[which].name;
    g.index = flat;
    g.analytic = var.grad().data[flat];
    double& w = var.mutable_value().data[flat];
    const double saved = w;
    w = saved + step;
    const double up = loss().item();
    w = saved - step;
    const double down = loss().item();
    w = saved;
    g.numeric = (up - down) / (2.0 * step);
    g.relative_error = relative_error(g.analytic, g.numeric);
    out.push_back(g);
  }
  return out;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("gbs_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace gbs::testing
