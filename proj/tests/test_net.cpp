#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "gbs/net.hpp"
#include "support.hpp"

using namespace gbs;
using namespace gbs::net;
using ad::Tensor;
using ad::Var;

namespace {

// Golden arrays live next to the test sources; GBS_UPDATE_GOLDEN=1 rewrites
// them from the current build.
void check_golden(const std::string& name, const ad::Buffer<double>& values) {
  const std::string path = std::string(GBS_GOLDEN_DIR) + "/" + name + ".txt";
  if (std::getenv("GBS_UPDATE_GOLDEN")) {
    std::ofstream out(path);
    char buf[40];
    for (double v : values) {
      std::snprintf(buf, sizeof(buf), "%.17g\n", v);
      out << buf;
    }
    return;
  }
  std::ifstream in(path);
  REQUIRE_MESSAGE(in.good(), "missing golden file " << path);
  std::vector<double> expected;
  double v;
  while (in >> v) expected.push_back(v);
  REQUIRE(expected.size() == values.size());
  for (std::size_t i = 0; i < values.size(); ++i)
    REQUIRE(values[i] == doctest::Approx(expected[i]).epsilon(1e-9).scale(1.0));
}

ad::Buffer<double> flatten(const std::vector<Var<double>>& vars) {
  ad::Buffer<double> out;
  for (const auto& v : vars) out.insert(out.end(), v.value().data.begin(), v.value().data.end());
  return out;
}

Image golden_image() {
  Rng rng(2718);
  return testing::random_image(16, 16, rng);
}

}  // namespace

TEST_CASE("encoder pyramid follows the stride relation") {
  ModelConfig c;
  GbsModel<float> model(c, 1);
  const auto pyr = model.encode(image_tensor<float>(Image(64, 64, 0.3)));
  REQUIRE(pyr.size() == 2);
  CHECK(pyr[0].shape() == std::vector<int>{256, 8, 8});
  CHECK(pyr[1].shape() == std::vector<int>{128, 16, 16});
  CHECK(c.heatmap_height() == 16);
  CHECK_THROWS_AS(model.encode(image_tensor<float>(Image(32, 32))), Error);

  ModelConfig bad = c;
  bad.image_height = 60;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("bias-free encoder maps zero input to a zero pyramid") {
  auto c = testing::tiny_config();
  c.encoder_bias = false;
  GbsModel<double> model(c, 2);
  for (const auto& block : model.encode(image_tensor<double>(Image(16, 16, 0.0))))
    for (double v : block.value().data) CHECK(v == 0.0);
}

TEST_CASE("text embedding lookups") {
  GbsModel<double> model(testing::tiny_config(), 3);
  const auto table = model.parameter("text/embedding").value();
  const int d = table.dim(1);
  auto row = [&](int r) { return ad::Buffer<double>(table.data.begin() + r * d, table.data.begin() + (r + 1) * d); };
  const auto one = model.embed_text({"red"}).value();
  CHECK(one.shape == std::vector<int>{1, d});
  CHECK(one.data == row(4));  // vocabulary index 3 -> table row 4
  const auto two = model.embed_text({"square", "blue"}).value();
  CHECK(ad::Buffer<double>(two.data.begin(), two.data.begin() + d) == row(5));
  CHECK(ad::Buffer<double>(two.data.begin() + d, two.data.end()) == row(1));
  CHECK(model.embed_text({"zebra"}).value().data == row(0));
  CHECK_THROWS_AS(model.embed_text({}), Error);
}

TEST_CASE("project and pool") {
  GbsModel<double> model(testing::tiny_config(), 4);
  auto seq1 = model.embed_text({"green"});
  const auto w = model.parameter("text/projection1/weight").value();
  const auto b = model.parameter("text/projection1/bias").value();
  const auto p1 = model.project_and_pool(seq1, 1).value();
  for (int o = 0; o < w.dim(0); ++o) {
    double acc = b[o];
    for (int k = 0; k < w.dim(1); ++k) acc += w[o * w.dim(1) + k] * seq1.value()[k];
    CHECK(p1[o] == doctest::Approx(acc).epsilon(1e-12));
  }
  const auto twice = model.project_and_pool(model.embed_text({"green", "green"}), 1).value();
  for (std::size_t i = 0; i < twice.numel(); ++i) CHECK(twice[i] == doctest::Approx(p1[i]).epsilon(1e-12));

  // Random sequence: affine map then mean, by hand.
  Rng rng(9);
  auto seq = ad::constant(testing::random_tensor<double>({3, 5}, rng));
  const auto w2 = model.parameter("text/projection2/weight").value();
  const auto b2 = model.parameter("text/projection2/bias").value();
  const auto p2 = model.project_and_pool(seq, 2).value();
  for (int o = 0; o < w2.dim(0); ++o) {
    double acc = 0;
    for (int j = 0; j < 3; ++j) {
      double y = b2[o];
      for (int k = 0; k < 5; ++k) y += w2[o * 5 + k] * seq.value()[j * 5 + k];
      acc += y / 3.0;
    }
    CHECK(p2[o] == doctest::Approx(acc).epsilon(1e-12));
  }
  CHECK_THROWS_AS(model.project_and_pool(seq, 3), Error);
}

TEST_CASE("text pooling is invariant to token order") {
  GbsModel<double> model(testing::tiny_config(), 5);
  const auto& vocab = model.config().vocabulary;
  Rng rng(11);
  for (int k = 0; k < 500; ++k) {
    Tokens tokens;
    const int n = 1 + static_cast<int>(rng.below(6));
    for (int i = 0; i < n; ++i) tokens.push_back(rng.bernoulli(0.1) ? "oov" : vocab[rng.below(vocab.size())]);
    Tokens shuffled = tokens;
    for (std::size_t i = shuffled.size() - 1; i > 0; --i) std::swap(shuffled[i], shuffled[rng.below(i + 1)]);
    const auto a = model.text_vectors(tokens), b = model.text_vectors(shuffled);
    for (std::size_t blk = 0; blk < a.size(); ++blk)
      for (std::size_t i = 0; i < a[blk].numel(); ++i)
        REQUIRE(std::abs(a[blk].value()[i] - b[blk].value()[i]) < 1e-12);
  }
}

TEST_CASE("attenuation examples") {
  // Pixel feature parallel to the text: the distance gate is 1.
  Tensor<double> block({3, 1, 2}, std::vector<double>{1, 0.5, 2, 0.1, 3, 0.7});
  Tensor<double> text({3}, std::vector<double>{0.5, 1.0, 1.5});
  const auto out = attenuate(ad::constant(block), ad::constant(text), Attenuation::kDistance).value();
  CHECK(out[0] == doctest::Approx(1.0));
  CHECK(out[2] == doctest::Approx(2.0));
  CHECK(out[4] == doctest::Approx(3.0));

  Tensor<double> ortho({2, 1, 1}, std::vector<double>{1, 0});
  Tensor<double> t2({2}, std::vector<double>{0, 1});
  CHECK(attenuate(ad::constant(ortho), ad::constant(t2), Attenuation::kCosine).value()[0] == 0.0);
  CHECK(attenuate(ad::constant(ortho), ad::constant(t2), Attenuation::kDist2Atten).value()[0] ==
        doctest::Approx(1.0));
}

TEST_CASE("distance attenuation on a 2x2x3 grid matches scalar arithmetic") {
  const std::vector<double> e{0.3, -1.0, 2.0, 0.0, 0.5, 0.5, 1.0, 1.5, 0.2, 0.0, -0.4, 0.9};
  const std::vector<double> w{0.6, -0.2, 1.1};
  const auto out =
      attenuate(ad::constant(Tensor<double>({3, 2, 2}, e)), ad::constant(Tensor<double>({3}, w)), Attenuation::kDistance)
          .value();
  const double wn = std::sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2]);
  for (int p = 0; p < 4; ++p) {
    double en = 0;
    for (int c = 0; c < 3; ++c) en += e[c * 4 + p] * e[c * 4 + p];
    en = std::sqrt(en);
    for (int c = 0; c < 3; ++c) {
      const double gate = std::exp(-std::abs(e[c * 4 + p] / en - w[c] / wn));
      CHECK(out[c * 4 + p] == doctest::Approx(gate * e[c * 4 + p]).epsilon(1e-12));
    }
  }
}

TEST_CASE("projection attenuation gates by the positive cosine") {
  const std::vector<double> e{1, -1, 0, 2};  // 2 channels, 1x2 pixels
  const std::vector<double> w{1, 1};
  const auto out =
      attenuate(ad::constant(Tensor<double>({2, 1, 2}, e)), ad::constant(Tensor<double>({2}, w)), Attenuation::kProjection)
          .value();
  // pixel 0: (1, 0) -> cos = 1/sqrt2; pixel 1: (-1, 2) -> cos = 1/sqrt10
  CHECK(out[0] == doctest::Approx(1 / std::sqrt(2.0)));
  CHECK(out[2] == doctest::Approx(0.0));
  CHECK(out[1] == doctest::Approx(-1 / std::sqrt(10.0)));
  CHECK(out[3] == doctest::Approx(2 / std::sqrt(10.0)));
}

TEST_CASE("distance gate is bounded in (0, 1] and equals 1 only when aligned") {
  Rng rng(12);
  for (int k = 0; k < 500; ++k) {
    const int ch = 1 + static_cast<int>(rng.below(6));
    auto block = ad::constant(testing::random_tensor<double>({ch, 2, 3}, rng));
    auto text = ad::constant(testing::random_tensor<double>({ch}, rng));
    const auto gate = ad::distance_gate(ad::normalize_channels(block), ad::normalize(text)).value();
    for (double g : gate.data) REQUIRE((g > 0.0 && g <= 1.0));
    // Make pixel 0 a positive multiple of the text vector.
    auto aligned = block.value();
    for (int c = 0; c < ch; ++c) aligned[c * 6] = 2.5 * text.value()[c];
    const auto g2 = ad::distance_gate(ad::normalize_channels(ad::constant(aligned)), ad::normalize(text)).value();
    for (int c = 0; c < ch; ++c) REQUIRE(g2[c * 6] == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("decoder output shape and degenerate depth") {
  auto c = testing::tiny_config();
  GbsModel<double> model(c, 6);
  const auto h = model.forward(image_tensor<double>(golden_image()), {"red", "circle"});
  CHECK(h.shape() == std::vector<int>{1, 4, 4});

  c.pyramid_depth = 1;
  GbsModel<double> single(c, 6);
  const auto h1 = single.forward(image_tensor<double>(golden_image()), {"red"});
  CHECK(h1.shape() == std::vector<int>{1, 2, 2});
  const auto pyr = model.encode(image_tensor<double>(golden_image()));
  CHECK_THROWS_AS(single.decode(pyr), Error);
}

TEST_CASE("decode and decode_unconditioned agree under an all-ones gate") {
  GbsModel<double> model(testing::tiny_config(), 7);
  const auto text = model.text_vectors({"blue", "square"});
  // Every pixel a positive multiple of its block's text vector.
  std::vector<Var<double>> pyr;
  Rng rng(3);
  for (int i = 1; i <= 2; ++i) {
    const auto& t = text[i - 1].value();
    const int ch = t.dim(0), hh = model.config().block_height(i), ww = model.config().block_width(i);
    Tensor<double> block({ch, hh, ww});
    for (int p = 0; p < hh * ww; ++p) {
      const double s = rng.uniform(0.5, 2.0);
      for (int c = 0; c < ch; ++c) block[c * hh * ww + p] = s * t[c];
    }
    pyr.push_back(ad::constant(block));
  }
  const auto a = model.decode(model.condition(pyr, text)).value();
  const auto b = model.decode_unconditioned(pyr).value();
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
}

TEST_CASE("zero pyramid through a bias-free decoder gives 0.5") {
  auto c = testing::tiny_config();
  c.decoder_bias = false;
  GbsModel<double> model(c, 8);
  std::vector<Var<double>> pyr;
  for (int i = 1; i <= 2; ++i)
    pyr.push_back(ad::constant(Tensor<double>({c.block_channels(i), c.block_height(i), c.block_width(i)})));
  const auto out = model.decode_unconditioned(pyr).value();
  for (double v : out.data) CHECK(v == 0.5);
}

TEST_CASE("scalar variants substitute a ones grid when unconditioned") {
  for (auto variant : {Attenuation::kCosine, Attenuation::kDist2Atten}) {
    GbsModel<double> model(testing::tiny_config(variant), 9);
    const auto pyr = model.encode(image_tensor<double>(golden_image()));
    const auto cond = model.condition(pyr, model.text_vectors({"red"}));
    CHECK(cond[0].dim(0) == 1);
    CHECK(cond[0].dim(1) == pyr[0].dim(1));
    const auto h = model.decode_unconditioned(pyr);
    CHECK(h.shape() == std::vector<int>{1, 4, 4});
  }
  GbsModel<double> att(testing::tiny_config(Attenuation::kAttention), 9);
  const auto pyr = att.encode(image_tensor<double>(golden_image()));
  const auto cond = att.condition(pyr, att.text_vectors({"red"}));
  for (std::size_t i = 0; i < pyr.size(); ++i) CHECK(cond[i].shape() == pyr[i].shape());
}

TEST_CASE("forward is deterministic and bounded") {
  GbsModel<float> model(testing::tiny_config(), 10);
  Rng rng(13);
  for (int k = 0; k < 100; ++k) {
    const Image img = testing::random_image(16, 16, rng);
    const Tokens t{model.config().vocabulary[rng.below(6)]};
    const auto a = model.forward(image_tensor<float>(img), t).value();
    const auto b = model.forward(image_tensor<float>(img), t).value();
    REQUIRE(a.data == b.data);
    for (float v : a.data) REQUIRE((v >= 0.0f && v <= 1.0f));
  }
}

TEST_CASE("every parameter group passes a finite-difference check") {
  for (auto variant : {Attenuation::kDistance, Attenuation::kProjection, Attenuation::kAttention,
                       Attenuation::kDist2Atten, Attenuation::kCosine}) {
    CAPTURE(attenuation_name(variant));
    GbsModel<double> model(testing::tiny_config(variant), 21);
    const auto img = image_tensor<double>(golden_image());
    const Tokens tokens{"green", "triangle"};
    auto probe = [&] { return ad::sum(model.forward(img, tokens)); };
    model.zero_grad();
    ad::backward(probe());
    Rng rng(5);
    for (auto& p : model.parameters()) {
      if (p.name == "text/embedding") continue;  // checked through the used rows below
      for (int k = 0; k < 3; ++k) {
        const std::size_t i = rng.below(p.value.numel());
        const double analytic = p.value.grad().data[i];
        double& w = p.value.mutable_value().data[i];
        const double saved = w;
        w = saved + 1e-6;
        const double up = probe().item();
        w = saved - 1e-6;
        const double down = probe().item();
        w = saved;
        const double numeric = (up - down) / 2e-6;
        CAPTURE(p.name);
        CHECK(testing::relative_error(analytic, numeric, 1e-5) < 1e-3);
      }
    }
    auto emb = model.parameter("text/embedding");
    const int d = emb.dim(1);
    for (int row : model.token_rows(tokens)) {
      const std::size_t i = static_cast<std::size_t>(row) * d;
      const double analytic = emb.grad().data[i];
      double& w = emb.mutable_value().data[i];
      const double saved = w;
      w = saved + 1e-6;
      const double up = probe().item();
      w = saved - 1e-6;
      const double down = probe().item();
      w = saved;
      CHECK(testing::relative_error(analytic, (up - down) / 2e-6, 1e-5) < 1e-3);
    }
  }
}

TEST_CASE("encode, decode and forward match golden outputs") {
  GbsModel<double> model(testing::tiny_config(), 31337);
  const auto img = image_tensor<double>(golden_image());
  const auto pyr = model.encode(img);
  check_golden("encode", flatten(pyr));
  const auto text = model.text_vectors({"red", "square"});
  check_golden("decode", model.decode(model.condition(pyr, text)).value().data);
  check_golden("decode_unconditioned", model.decode_unconditioned(pyr).value().data);
  check_golden("forward", model.forward(img, {"blue", "circle"}).value().data);
}

TEST_CASE("model config text round trip") {
  auto c = testing::tiny_config(Attenuation::kProjection);
  c.final_squash = false;
  CHECK(ModelConfig::from_text(c.to_text()) == c);
  CHECK_THROWS_AS(ModelConfig::from_text("bogus=1\n"), Error);
  for (auto v : {Attenuation::kDistance, Attenuation::kProjection, Attenuation::kAttention, Attenuation::kDist2Atten,
                 Attenuation::kCosine})
    CHECK(parse_attenuation(attenuation_name(v)) == v);
}
