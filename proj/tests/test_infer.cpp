#include <cmath>

#include "doctest.h"
#include "gbs/infer.hpp"
#include "support.hpp"

using namespace gbs;
using namespace gbs::infer;
using ad::Tensor;
using ad::Var;

namespace {

Var<double> tensor(std::vector<int> shape, std::vector<double> values) {
  return ad::constant(Tensor<double>(std::move(shape), std::move(values)));
}

double cos_plus(const Tensor<double>& e, int p, const Tensor<double>& w) {
  const int ch = e.dim(0), n = e.dim(1) * e.dim(2);
  double dot = 0, en = 0, wn = 0;
  for (int c = 0; c < ch; ++c) {
    dot += e[c * n + p] * w[c];
    en += e[c * n + p] * e[c * n + p];
    wn += w[c] * w[c];
  }
  return std::max(0.0, dot / (std::max(std::sqrt(en), 1e-8) * std::max(std::sqrt(wn), 1e-8)));
}

}  // namespace

TEST_CASE("direct alignment of a single block") {
  auto e = tensor({2, 1, 2}, {1, 0, 0, 1});
  auto w = tensor({2}, {1, 0});
  const Heatmap h = direct_alignment_map<double>({e}, {w}, 2);
  CHECK(h(0, 0) == doctest::Approx(1.0));
  CHECK(h(0, 1) == 0.0);
  // Orthogonal or opposing everywhere.
  const Heatmap z = direct_alignment_map<double>({tensor({2, 1, 2}, {0, -1, 1, 0})}, {tensor({2}, {1, 0})}, 2);
  for (double v : z.values()) CHECK(v == 0.0);
}

TEST_CASE("direct alignment matches a two-block loop oracle") {
  Rng rng(1);
  for (int k = 0; k < 100; ++k) {
    const auto coarse = testing::random_tensor<double>({3, 2, 2}, rng);
    const auto fine = testing::random_tensor<double>({4, 4, 4}, rng);
    const auto w1 = testing::random_tensor<double>({3}, rng), w2 = testing::random_tensor<double>({4}, rng);
    const Heatmap h = direct_alignment_map<double>({ad::constant(coarse), ad::constant(fine)},
                                                   {ad::constant(w1), ad::constant(w2)}, 2);
    REQUIRE(h.height() == 4);
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) {
        const double expected = std::max(cos_plus(coarse, (r / 2) * 2 + c / 2, w1), cos_plus(fine, r * 4 + c, w2));
        REQUIRE(std::abs(h(r, c) - expected) < 1e-12);
      }
  }
  CHECK_THROWS_AS(direct_alignment_map<double>({tensor({1, 1, 1}, {1})}, {}, 2), Error);
}

TEST_CASE("model heatmaps have the native size and lie in [0, 1]") {
  net::GbsModel<double> model(testing::tiny_config(), 2);
  Rng rng(3);
  for (int k = 0; k < 20; ++k) {
    const Image img = testing::random_image(16, 16, rng);
    for (const auto& h : {heatmap_gbs(model, img, {"red"}), heatmap_i2t(model, img, {"red"}),
                          heatmap_fused(model, img, {"red"})}) {
      REQUIRE(h.height() == 4);
      REQUIRE(h.width() == 4);
      for (double v : h.values()) REQUIRE((v >= 0.0 && v <= 1.0));
    }
    const Heatmap expected = fuse_geometric(heatmap_gbs(model, img, {"red"}), heatmap_i2t(model, img, {"red"}));
    const Heatmap fused = heatmap_fused(model, img, {"red"});
    for (std::size_t i = 0; i < fused.size(); ++i) REQUIRE(std::abs(fused[i] - expected[i]) < 1e-12);
  }
}

TEST_CASE("fuse_geometric examples") {
  CHECK(fuse_geometric(Heatmap(1, 1, 0.25), Heatmap(1, 1, 1.0))[0] == doctest::Approx(0.5));
  CHECK(fuse_geometric(Heatmap(1, 1, 0.0), Heatmap(1, 1, 0.0))[0] == doctest::Approx(kFuseEps));
  CHECK(fuse_geometric(Heatmap(1, 1, 0.0), Heatmap(1, 1, 1.0))[0] == doctest::Approx(std::sqrt(kFuseEps)));
  CHECK_THROWS_AS(fuse_geometric(Heatmap(2, 2), Heatmap(2, 3)), Error);
}

TEST_CASE("fuse_geometric properties") {
  Rng rng(4);
  for (int k = 0; k < 500; ++k) {
    const Heatmap a = testing::random_grid(3, 5, rng), b = testing::random_grid(3, 5, rng);
    const Heatmap ab = fuse_geometric(a, b), ba = fuse_geometric(b, a), aa = fuse_geometric(a, a);
    for (std::size_t i = 0; i < ab.size(); ++i) {
      REQUIRE(ab[i] == ba[i]);
      const double lo = std::min(std::max(a[i], kFuseEps), std::max(b[i], kFuseEps));
      const double hi = std::max(std::max(a[i], kFuseEps), std::max(b[i], kFuseEps));
      REQUIRE(ab[i] >= lo * (1 - 1e-12));
      REQUIRE(ab[i] <= hi * (1 + 1e-12));
      REQUIRE(std::abs(aa[i] - std::max(a[i], kFuseEps)) < 1e-12);
    }
  }
}

TEST_CASE("boxes_to_heatmap matches a loop oracle") {
  Rng rng(5);
  for (int k = 0; k < 100; ++k) {
    std::vector<ScoredBox> boxes;
    const int n = static_cast<int>(rng.below(4));
    for (int i = 0; i < n; ++i) {
      ScoredBox b;
      b.x_min = static_cast<int>(rng.below(9));
      b.x_max = b.x_min + 1 + static_cast<int>(rng.below(10 - b.x_min));
      b.y_min = static_cast<int>(rng.below(7));
      b.y_max = b.y_min + 1 + static_cast<int>(rng.below(8 - b.y_min));
      b.score = rng.uniform();
      boxes.push_back(b);
    }
    const Heatmap h = boxes_to_heatmap(boxes, 8, 10);
    for (int r = 0; r < 8; ++r)
      for (int c = 0; c < 10; ++c) {
        double expected = 0.0;
        for (const auto& b : boxes)
          if (c >= b.x_min && c < b.x_max && r >= b.y_min && r < b.y_max) expected = std::max(expected, b.score);
        REQUIRE(h(r, c) == expected);
      }
  }
  CHECK_THROWS_AS(boxes_to_heatmap({{0, 0, 11, 2, 1.0}}, 8, 10), Error);
  CHECK_THROWS_AS(boxes_to_heatmap({{3, 0, 3, 2, 1.0}}, 8, 10), Error);
  CHECK_THROWS_AS(boxes_to_heatmap({{0, 0, 2, 2, 1.5}}, 8, 10), Error);
}

TEST_CASE("adding a box never lowers the detector map") {
  Rng rng(6);
  for (int k = 0; k < 500; ++k) {
    std::vector<ScoredBox> boxes{{1, 1, 4, 5, rng.uniform()}};
    const Heatmap before = boxes_to_heatmap(boxes, 6, 6);
    const int x0 = static_cast<int>(rng.below(5)), y0 = static_cast<int>(rng.below(5));
    boxes.push_back({x0, y0, x0 + 1 + static_cast<int>(rng.below(6 - x0 - 1 + 1)) , y0 + 1, rng.uniform()});
    if (boxes.back().x_max > 6) boxes.back().x_max = 6;
    const Heatmap after = boxes_to_heatmap(boxes, 6, 6);
    for (std::size_t i = 0; i < after.size(); ++i) REQUIRE(after[i] >= before[i]);
  }
}

TEST_CASE("ensemble keeps the model argmax against an empty detector") {
  Rng rng(7);
  for (int k = 0; k < 500; ++k) {
    Heatmap m = testing::random_grid(6, 6, rng);
    for (auto& v : m.values()) v = std::max(v, 1e-3);
    const Heatmap e = ensemble(m, Heatmap(6, 6, 0.0));
    std::size_t bm = 0, be = 0;
    for (std::size_t i = 1; i < m.size(); ++i) {
      if (m[i] > m[bm]) bm = i;
      if (e[i] > e[be]) be = i;
    }
    REQUIRE(bm == be);
  }
}
