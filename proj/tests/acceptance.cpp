// Acceptance runner: prints one PASS/FAIL line per criterion and exits
// nonzero when any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "gbs/alphagen.hpp"
#include "gbs/commands.hpp"
#include "gbs/infer.hpp"
#include "gbs/losses.hpp"
#include "gbs/manifest.hpp"
#include "gbs/toy.hpp"
#include "gbs/trainer.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace gbs;
using namespace gbs::workbench;
using ad::Tensor;
using ad::Var;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* format, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, format, a, b, c, d);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------- 1

Outcome gradient_check() {
  const auto t0 = std::chrono::steady_clock::now();
  net::GbsModel<double> model(testing::tiny_config(), 2024);
  Rng rng(77);
  blend::BlendedSample s;
  s.blended = testing::random_image(16, 16, rng);
  s.alpha = testing::random_grid(16, 16, rng);
  s.text_a = {"red", "circle"};
  s.text_b = {"blue", "square"};
  const std::vector<Image> images{testing::random_image(16, 16, rng), testing::random_image(16, 16, rng),
                                  testing::random_image(16, 16, rng), testing::random_image(16, 16, rng)};
  const std::vector<blend::Tokens> texts{{"red", "circle"}, {"green", "square"}, {"blue"}, {"triangle", "red"}};
  const std::vector<std::pair<std::string, std::function<Var<double>()>>> losses{
      {"L_sep", [&] { return losses::loss_sep(model, s); }},
      {"L_adv", [&] { return losses::loss_adv(model, s.blended); }},
      {"L_neg", [&] { return losses::loss_neg(model, s.blended, {"green", "triangle"}); }},
      {"L_i2t", [&] { return losses::loss_i2t(model, images, texts, 10.0); }},
  };
  double worst = 0.0;
  std::string where;
  uint64_t seed = 1;
  for (const auto& [name, fn] : losses) {
    for (const auto& g : testing::check_gradients(model, fn, 10, seed++, 1e-3)) {
      if (g.relative_error > worst) {
        worst = g.relative_error;
        where = name + " " + g.parameter;
      }
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-3 && secs < 60.0,
          fmt("max relative error %.3g over 4 losses x 10 parameters, %.2f s", worst, secs) + " (worst: " + where +
              ")"};
}

// ---------------------------------------------------------------- 2

double density(double r, double c, double mr, double mc, double s) {
  return std::exp(-((r - mr) * (r - mr) + (c - mc) * (c - mc)) / (2 * s * s)) / (2 * M_PI * s * s);
}

Outcome oracle_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  constexpr int kInstances = 100;
  std::map<std::string, int> failures;
  Rng rng(4242);
  auto dims = [&](int lo, int hi) { return lo + static_cast<int>(rng.below(hi - lo + 1)); };

  for (int k = 0; k < kInstances; ++k) {
    // blend_images
    {
      const int h = dims(1, 9), w = dims(1, 9);
      const Image a = testing::random_image(h, w, rng), b = testing::random_image(h, w, rng);
      const Grid alpha = testing::random_grid(h, w, rng);
      const Image out = blend::blend_images(a, b, alpha);
      bool ok = true;
      for (int ch = 0; ch < 3; ++ch)
        for (int r = 0; r < h; ++r)
          for (int c = 0; c < w; ++c)
            ok &= std::abs(out.at(ch, r, c) - (alpha(r, c) * a.at(ch, r, c) + (1 - alpha(r, c)) * b.at(ch, r, c))) <=
                  1e-6;
      failures["blend_images"] += !ok;
    }
    // gen_gaussian_pair: replay the parameter draws, then the per-pixel formula.
    {
      alphagen::AlphaGenSpec spec;
      spec.scheme = alphagen::Scheme::kGaussianPair;
      spec.seed = rng.next();
      const int h = dims(2, 12), w = dims(2, 12);
      const Grid g = alphagen::gen_gaussian_pair(spec, h, w);
      Rng replay(spec.seed);
      const double m1r = replay.uniform() * h, m1c = replay.uniform() * w;
      const double s1 = (0.1 + 0.4 * replay.uniform()) * std::min(h, w);
      const double m2r = replay.uniform() * h, m2c = replay.uniform() * w;
      const double s2 = (0.1 + 0.4 * replay.uniform()) * std::min(h, w);
      bool ok = true;
      for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
          const double g1 = density(r, c, m1r, m1c, s1), g2 = density(r, c, m2r, m2c, s2);
          const double expected = g1 + g2 > 0 ? g1 / (g1 + g2) : g(r, c);
          ok &= std::abs(g(r, c) - expected) <= 1e-6;
        }
      failures["gen_gaussian_pair"] += !ok;
    }
    // gen_circle: replay the draws, then the binary membership test.
    {
      alphagen::AlphaGenSpec spec;
      spec.scheme = alphagen::Scheme::kCircle;
      spec.seed = rng.next();
      const int h = dims(2, 16), w = dims(2, 16);
      const Grid g = alphagen::gen_circle(spec, h, w);
      Rng replay(spec.seed);
      const double cr = (0.25 + 0.5 * replay.uniform()) * h, cc = (0.25 + 0.5 * replay.uniform()) * w;
      const double rad = (0.15 + 0.3 * replay.uniform()) * std::min(h, w);
      bool ok = true;
      for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
          ok &= g(r, c) == (((r - cr) * (r - cr) + (c - cc) * (c - cc) <= rad * rad) ? 1.0 : 0.0);
      failures["gen_circle"] += !ok;
    }
    // boxes_to_heatmap
    {
      const int h = dims(1, 10), w = dims(1, 10);
      std::vector<infer::ScoredBox> boxes;
      for (int n = static_cast<int>(rng.below(4)); n > 0; --n) {
        infer::ScoredBox b;
        b.x_min = static_cast<int>(rng.below(w));
        b.x_max = b.x_min + 1 + static_cast<int>(rng.below(w - b.x_min));
        b.y_min = static_cast<int>(rng.below(h));
        b.y_max = b.y_min + 1 + static_cast<int>(rng.below(h - b.y_min));
        b.score = rng.uniform();
        boxes.push_back(b);
      }
      const Heatmap m = infer::boxes_to_heatmap(boxes, h, w);
      bool ok = true;
      for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
          double expected = 0.0;
          for (const auto& b : boxes)
            if (r >= b.y_min && r < b.y_max && c >= b.x_min && c < b.x_max) expected = std::max(expected, b.score);
          ok &= m(r, c) == expected;
        }
      failures["boxes_to_heatmap"] += !ok;
    }
    // fuse_geometric
    {
      const int h = dims(1, 8), w = dims(1, 8);
      Heatmap a = testing::random_grid(h, w, rng), b = testing::random_grid(h, w, rng);
      if (k % 4 == 0) a[0] = 0.0;
      const Heatmap f = infer::fuse_geometric(a, b);
      bool ok = true;
      for (std::size_t i = 0; i < f.size(); ++i)
        ok &= std::abs(f[i] - std::sqrt(std::max(a[i], 1e-6) * std::max(b[i], 1e-6))) <= 1e-6;
      failures["fuse_geometric"] += !ok;
    }
    // similarity_matrix
    {
      const int batch = dims(1, 3);
      std::vector<std::vector<Var<double>>> pyr(batch), txt(batch);
      for (int j = 0; j < batch; ++j)
        for (int blk = 0; blk < 2; ++blk) {
          const int ch = dims(2, 4), side = blk == 0 ? 2 : 4;
          pyr[j].push_back(ad::constant(testing::random_tensor<double>({ch + blk * 10, side, side}, rng)));
          txt[j].push_back(ad::constant(testing::random_tensor<double>({ch + blk * 10}, rng)));
        }
      // Blocks must agree in width across the batch.
      for (int j = 1; j < batch; ++j)
        for (int blk = 0; blk < 2; ++blk) {
          const int ch = pyr[0][blk].dim(0), side = pyr[0][blk].dim(1);
          pyr[j][blk] = ad::constant(testing::random_tensor<double>({ch, side, side}, rng));
          txt[j][blk] = ad::constant(testing::random_tensor<double>({ch}, rng));
        }
      const auto z = losses::similarity_matrix(pyr, txt).value();
      bool ok = true;
      for (int t = 0; t < batch; ++t)
        for (int m = 0; m < batch; ++m) {
          double best = -2;
          for (int blk = 0; blk < 2; ++blk) {
            const auto& e = pyr[m][blk].value();
            const auto& w = txt[t][blk].value();
            const int ch = e.dim(0), n = e.dim(1) * e.dim(2);
            double wn = 0;
            for (int c = 0; c < ch; ++c) wn += w[c] * w[c];
            wn = std::max(std::sqrt(wn), 1e-8);
            std::vector<double> pooled(ch, 0.0);
            for (int p = 0; p < n; ++p) {
              double dot = 0, en = 0;
              for (int c = 0; c < ch; ++c) {
                dot += e[c * n + p] * w[c];
                en += e[c * n + p] * e[c * n + p];
              }
              const double weight = std::max(0.0, dot / (std::max(std::sqrt(en), 1e-8) * wn));
              for (int c = 0; c < ch; ++c) pooled[c] += weight * e[c * n + p];
            }
            double dot = 0, pn = 0;
            for (int c = 0; c < ch; ++c) {
              dot += pooled[c] * w[c];
              pn += pooled[c] * pooled[c];
            }
            best = std::max(best, dot / (std::max(std::sqrt(pn), 1e-8) * wn));
          }
          ok &= std::abs(z[t * batch + m] - best) <= 1e-6;
        }
      failures["similarity_matrix"] += !ok;
    }
    // pointing_hit
    {
      const int h = dims(2, 10), w = dims(2, 10);
      Heatmap m = testing::random_grid(h, w, rng);
      if (k % 3 == 0) m[rng.below(m.size())] = m[rng.below(m.size())] = 2.0;
      std::vector<eval::Box> boxes;
      for (int n = 1 + static_cast<int>(rng.below(3)); n > 0; --n) {
        eval::Box b;
        b.x_min = static_cast<int>(rng.below(w));
        b.x_max = b.x_min + 1 + static_cast<int>(rng.below(w - b.x_min));
        b.y_min = static_cast<int>(rng.below(h));
        b.y_max = b.y_min + 1 + static_cast<int>(rng.below(h - b.y_min));
        boxes.push_back(b);
      }
      std::size_t best = 0;
      for (std::size_t i = 1; i < m.size(); ++i)
        if (m[i] > m[best]) best = i;
      const int br = static_cast<int>(best) / w, bc = static_cast<int>(best) % w;
      bool expected = false;
      for (const auto& b : boxes) expected |= br >= b.y_min && br < b.y_max && bc >= b.x_min && bc < b.x_max;
      failures["pointing_hit"] += eval::pointing_hit(m, boxes) != expected;
    }
  }
  int total = 0;
  std::string failed;
  for (const auto& [name, n] : failures) {
    total += n;
    if (n) failed += " " + name + "=" + std::to_string(n);
  }
  const double secs = seconds_since(t0);
  return {total == 0 && secs < 60.0,
          fmt("7 operations x %.0f instances, %.0f mismatches, %.1f s", kInstances, total, secs) + failed};
}

// ---------------------------------------------------------------- 3

Outcome invariant_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  constexpr int kCases = 500;
  std::map<std::string, int> failures;
  Rng rng(9001);

  // Alpha maps of every scheme stay in [0, 1].
  for (int k = 0; k < kCases; ++k) {
    alphagen::AlphaGenSpec spec;
    spec.scheme = static_cast<alphagen::Scheme>(k % 4);
    spec.seed = rng.next();
    const int h = 4 + static_cast<int>(rng.below(29)), w = 4 + static_cast<int>(rng.below(29));
    const auto sample = alphagen::generate(spec, h, w);
    bool ok = sample.alpha.height() == h && sample.alpha.width() == w;
    for (double v : sample.alpha.values()) ok &= v >= 0.0 && v <= 1.0;
    failures["alpha range"] += !ok;
  }
  // A Gaussian pair and its swap sum to one.
  for (int k = 0; k < kCases; ++k) {
    const int h = 4 + static_cast<int>(rng.below(20)), w = 4 + static_cast<int>(rng.below(20));
    const double s = std::min(h, w);
    alphagen::GaussianPair p{rng.uniform(0, h), rng.uniform(0, w), rng.uniform(0.1, 0.5) * s,
                             rng.uniform(0, h), rng.uniform(0, w), rng.uniform(0.1, 0.5) * s};
    alphagen::GaussianPair q{p.mu2_row, p.mu2_col, p.sigma2, p.mu1_row, p.mu1_col, p.sigma1};
    const Grid a = alphagen::gaussian_pair_map(h, w, p), b = alphagen::gaussian_pair_map(h, w, q);
    bool ok = true;
    for (std::size_t i = 0; i < a.size(); ++i) ok &= std::abs(a[i] + b[i] - 1.0) <= 1e-12;
    failures["gaussian complement"] += !ok;
  }
  // loss_sep is unchanged by swapping the pair and complementing alpha.
  {
    net::GbsModel<double> model(testing::tiny_config(), 31);
    const auto& vocab = model.config().vocabulary;
    for (int k = 0; k < kCases; ++k) {
      const Image a = testing::random_image(16, 16, rng), b = testing::random_image(16, 16, rng);
      Grid alpha(16, 16);
      for (auto& v : alpha.values()) v = static_cast<double>(rng.below(257)) / 256.0;
      Grid flipped = alpha;
      for (auto& v : flipped.values()) v = 1.0 - v;
      blend::BlendedSample s, t;
      s.text_a = t.text_b = {vocab[rng.below(vocab.size())]};
      s.text_b = t.text_a = {vocab[rng.below(vocab.size())], vocab[rng.below(vocab.size())]};
      s.alpha = alpha;
      t.alpha = flipped;
      s.blended = blend::blend_images(a, b, alpha);
      t.blended = blend::blend_images(b, a, flipped);
      failures["pair-swap symmetry"] += losses::loss_sep(model, s).item() != losses::loss_sep(model, t).item();
    }
  }
  // Fusion is commutative and idempotent up to the floor.
  for (int k = 0; k < kCases; ++k) {
    const Heatmap a = testing::random_grid(5, 7, rng), b = testing::random_grid(5, 7, rng);
    const Heatmap ab = infer::fuse_geometric(a, b), ba = infer::fuse_geometric(b, a), aa = infer::fuse_geometric(a, a);
    bool ok = true;
    for (std::size_t i = 0; i < a.size(); ++i)
      ok &= ab[i] == ba[i] && std::abs(aa[i] - std::max(a[i], infer::kFuseEps)) <= 1e-12;
    failures["fuse commutative/idempotent"] += !ok;
  }
  // Pointing is unchanged by strictly monotone transforms.
  for (int k = 0; k < kCases; ++k) {
    const Heatmap h = testing::random_grid(9, 9, rng);
    Heatmap t = h;
    const double scale = rng.uniform(0.1, 5.0), shift = rng.uniform(-3.0, 3.0);
    for (auto& v : t.values()) v = k % 2 ? scale * v + shift : std::exp(scale * v) + shift;
    const int x = static_cast<int>(rng.below(8)), y = static_cast<int>(rng.below(8));
    const std::vector<eval::Box> boxes{{x, y, x + 2, y + 2}};
    failures["pointing monotone"] +=
        eval::argmax(h) != eval::argmax(t) || eval::pointing_hit(h, boxes) != eval::pointing_hit(t, boxes);
  }
  // Text pooling ignores token order.
  {
    net::GbsModel<double> model(testing::tiny_config(), 32);
    const auto& vocab = model.config().vocabulary;
    for (int k = 0; k < kCases; ++k) {
      blend::Tokens tokens;
      for (int n = 1 + static_cast<int>(rng.below(6)); n > 0; --n) tokens.push_back(vocab[rng.below(vocab.size())]);
      blend::Tokens shuffled = tokens;
      for (std::size_t i = shuffled.size() - 1; i > 0; --i) std::swap(shuffled[i], shuffled[rng.below(i + 1)]);
      const auto a = model.text_vectors(tokens), b = model.text_vectors(shuffled);
      bool ok = true;
      for (std::size_t blk = 0; blk < a.size(); ++blk)
        for (std::size_t i = 0; i < a[blk].numel(); ++i) ok &= std::abs(a[blk].value()[i] - b[blk].value()[i]) <= 1e-12;
      failures["pooling permutation"] += !ok;
    }
  }
  int total = 0;
  std::string failed;
  for (const auto& [name, n] : failures) {
    total += n;
    if (n) failed += " [" + name + ": " + std::to_string(n) + "]";
  }
  const double secs = seconds_since(t0);
  return {total == 0 && secs < 120.0,
          fmt("6 invariants x %.0f cases, %.0f violations, %.1f s", kCases, total, secs) + failed};
}

// ---------------------------------------------------------------- toy runs

struct ToyRuns {
  fs::path work;
  fs::path train_manifest, eval_manifest;
  int steps = 3000;
  uint64_t seed = 7;

  void prepare() {
    fs::create_directories(work);
    toy::ToyDatasetSpec train;
    train.sample_count = 2000;
    train.seed = 101;
    train.name = "train";
    train_manifest = toy::generate_toy_dataset(train, work / "data");
    toy::ToyDatasetSpec test = train;
    test.sample_count = 150;
    test.seed = 202;
    test.name = "eval";
    eval_manifest = toy::generate_toy_dataset(test, work / "data");
  }

  TrainConfig config(bool regularizers) const {
    TrainConfig c = toy_preset();
    c.steps = steps;
    c.seed = seed;
    if (!regularizers) c.weights.gamma_adv = c.weights.gamma_neg = 0.0;
    return c;
  }

  TrainResult run(const std::string& name, bool regularizers) const {
    fs::remove_all(work / name);
    return train(config(regularizers), train_manifest, work / name);
  }
};

double fused_accuracy(const fs::path& checkpoint, const fs::path& manifest, const fs::path* heatmaps = nullptr) {
  EvalOptions options;
  if (heatmaps) options.heatmap_dir = *heatmaps;
  return evaluate_cmd(checkpoint, manifest, options).accuracy;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string work = (fs::temp_directory_path() / "gbs_acceptance").string();
  std::vector<int> only, known_red;
  ToyRuns toy_runs;
  app.add_option("--work-dir", work, "Scratch directory for the toy runs");
  app.add_option("--criteria", only, "Run only these criteria");
  app.add_option("--steps", toy_runs.steps, "Training steps of the toy runs");
  app.add_option("--known-red", known_red, "Criteria whose failure is documented and does not set the exit code");
  CLI11_PARSE(app, argc, argv);
  const std::set<int> selected(only.begin(), only.end());
  auto wanted = [&](int n) { return selected.empty() || selected.count(n); };

  const std::set<int> documented(known_red.begin(), known_red.end());
  bool all_pass = true;
  auto report = [&](int n, const std::string& title, const Outcome& o) {
    const bool excused = !o.pass && documented.count(n);
    all_pass &= o.pass || excused;
    std::cout << "criterion " << n << " (" << title << "): " << (o.pass ? "PASS" : "FAIL") << "  " << o.detail
              << (excused ? "  [known red, see README]" : "") << std::endl;
  };
  auto guarded = [&](int n, const std::string& title, const std::function<Outcome()>& fn) {
    if (!wanted(n)) return;
    try {
      report(n, title, fn());
    } catch (const std::exception& e) {
      report(n, title, {false, std::string("error: ") + e.what()});
    }
  };

  guarded(1, "gradient correctness", gradient_check);
  guarded(2, "oracle equivalence", oracle_suite);
  guarded(3, "invariants", invariant_suite);

  const bool toy_needed = wanted(4) || wanted(5) || wanted(6) || wanted(7);
  if (!toy_needed) return all_pass ? 0 : 1;

  toy_runs.work = work;
  std::optional<TrainResult> main_run;
  double main_accuracy = 0.0;
  double main_seconds = 0.0;
  try {
    toy_runs.prepare();
    const auto t0 = std::chrono::steady_clock::now();
    main_run = toy_runs.run("run_a", true);
    main_seconds = seconds_since(t0);
    const fs::path maps = fs::path(work) / "run_a_maps";
    main_accuracy = fused_accuracy(main_run->checkpoint, toy_runs.eval_manifest, &maps);
  } catch (const std::exception& e) {
    std::cout << "toy run failed: " << e.what() << std::endl;
  }

  guarded(4, "toy end-to-end", [&]() -> Outcome {
    if (!main_run) return {false, "training did not finish"};
    const auto samples = manifest::load_grounding(toy_runs.eval_manifest);
    const double chance = eval::chance_rate(samples);
    const bool ok = samples.size() == 300 && main_accuracy >= 0.85 && main_accuracy - chance >= 0.25;
    return {ok, fmt("fused accuracy %.4f, chance %.4f, margin %.1f points, %.0f s training", main_accuracy, chance,
                    100 * (main_accuracy - chance), main_seconds) +
                    " on " + std::to_string(samples.size()) + " pairs"};
  });

  guarded(5, "regularizer ablation", [&]() -> Outcome {
    if (!main_run) return {false, "training did not finish"};
    const auto ablated = toy_runs.run("run_no_reg", false);
    const double acc = fused_accuracy(ablated.checkpoint, toy_runs.eval_manifest);
    const double drop = 100 * (main_accuracy - acc);
    return {drop >= 3.0, fmt("with L_adv, L_neg %.4f, without %.4f, drop %.1f points", main_accuracy, acc, drop)};
  });

  guarded(6, "detector ensemble", [&]() -> Outcome {
    if (!main_run) return {false, "training did not finish"};
    std::vector<DetectionRecord> detections;
    int covered = 0;
    for (const auto& r : manifest::read(toy_runs.eval_manifest))
      for (const auto& p : r.phrases) {
        DetectionRecord d{r.id, p.phrase, {}};
        if (blend::tokenize(p.phrase).at(0) == "red") {
          for (const auto& b : p.boxes) d.boxes.push_back({b.x_min, b.y_min, b.x_max, b.y_max, 1.0});
          ++covered;
        }
        detections.push_back(d);
      }
    const fs::path file = fs::path(work) / "red_detector.jsonl";
    write_detections(file, detections);
    const auto reports = ensemble_cmd(fs::path(work) / "run_a_maps", file, toy_runs.eval_manifest);
    const double best = std::max(reports.model.accuracy, reports.detector.accuracy);
    return {reports.ensemble.accuracy >= best,
            fmt("model %.4f, detector %.4f, ensemble %.4f", reports.model.accuracy, reports.detector.accuracy,
                reports.ensemble.accuracy) +
                " (detector covers " + std::to_string(covered) + " red phrases)"};
  });

  guarded(7, "reproducibility", [&]() -> Outcome {
    if (!main_run) return {false, "training did not finish"};
    const auto again = toy_runs.run("run_b", true);
    const bool same_csv = slurp(main_run->metrics) == slurp(again.metrics);
    const bool same_ckpt = slurp(main_run->checkpoint) == slurp(again.checkpoint);

    const Checkpoint loaded = load_checkpoint(main_run->checkpoint);
    const fs::path copy = fs::path(work) / "roundtrip.gbs";
    save_checkpoint(copy, loaded);
    const Checkpoint reloaded = load_checkpoint(copy);
    bool same_arrays = loaded.arrays.size() == reloaded.arrays.size() && loaded.model == reloaded.model &&
                       loaded.metadata == reloaded.metadata;
    for (std::size_t i = 0; same_arrays && i < loaded.arrays.size(); ++i)
      same_arrays = loaded.arrays[i].first == reloaded.arrays[i].first &&
                    loaded.arrays[i].second.shape == reloaded.arrays[i].second.shape &&
                    std::memcmp(loaded.arrays[i].second.data.data(), reloaded.arrays[i].second.data.data(),
                                loaded.arrays[i].second.numel() * sizeof(float)) == 0;
    const auto model = restore_model(loaded), model2 = restore_model(reloaded);
    const auto samples = manifest::load_grounding(toy_runs.eval_manifest);
    bool same_output = true;
    for (std::size_t i = 0; i < 20 && i < samples.size(); ++i) {
      const auto a = model_heatmap(model, samples[i].image, samples[i].phrase, HeatmapOutput::kFused);
      const auto b = model_heatmap(model2, samples[i].image, samples[i].phrase, HeatmapOutput::kFused);
      same_output &= a == b;
    }
    const bool ok = same_csv && same_ckpt && same_arrays && same_output && slurp(copy) == slurp(main_run->checkpoint);
    return {ok, std::string("metrics CSV ") + (same_csv ? "identical" : "DIFFERENT") + ", final checkpoint " +
                    (same_ckpt ? "identical" : "DIFFERENT") + ", save/load " +
                    (same_arrays && same_output ? "bit-exact" : "NOT bit-exact")};
  });

  return all_pass ? 0 : 1;
}
