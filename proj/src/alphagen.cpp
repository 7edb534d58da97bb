#include "gbs/alphagen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "gbs/rng.hpp"

namespace gbs::alphagen {

std::string scheme_name(Scheme scheme) {
  switch (scheme) {
    case Scheme::kPerlin: return "perlin";
    case Scheme::kGaussianPair: return "gaussian_pair";
    case Scheme::kCircle: return "circle";
    case Scheme::kScaleShift: return "scale_shift";
  }
  return "unknown";
}

Scheme parse_scheme(const std::string& name) {
  if (name == "perlin") return Scheme::kPerlin;
  if (name == "gaussian_pair" || name == "gaussian") return Scheme::kGaussianPair;
  if (name == "circle") return Scheme::kCircle;
  if (name == "scale_shift") return Scheme::kScaleShift;
  throw Error(ErrorKind::kParameter, "unknown alpha scheme: " + name);
}

namespace {

void check_dims(int height, int width, int minimum) {
  GBS_CHECK(height >= minimum && width >= minimum, kParameter,
            "alpha map dimensions must be >= " + std::to_string(minimum));
}

double fade(double t) { return t * t * t * (t * (t * 6 - 15) + 10); }

double lerp(double a, double b, double t) { return a + t * (b - a); }

// Eight gradient directions; the diagonal ones have length sqrt(2), which
// bounds the single-octave output by 1.
double grad(uint8_t hash, double dx, double dy) {
  switch (hash & 7) {
    case 0: return dx + dy;
    case 1: return -dx + dy;
    case 2: return dx - dy;
    case 3: return -dx - dy;
    case 4: return dx;
    case 5: return -dx;
    case 6: return dy;
    default: return -dy;
  }
}

}  // namespace

std::array<uint8_t, 256> perlin_permutation(uint64_t seed, int octave) {
  std::array<uint8_t, 256> perm{};
  std::iota(perm.begin(), perm.end(), uint8_t{0});
  Rng rng(derive_seed(seed, static_cast<uint64_t>(octave)));
  for (std::size_t i = perm.size() - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
  return perm;
}

double perlin_noise(const std::array<uint8_t, 256>& perm, double x, double y) {
  const double fx = std::floor(x), fy = std::floor(y);
  const int xi = static_cast<int>(fx) & 255;
  const int yi = static_cast<int>(fy) & 255;
  const double dx = x - fx, dy = y - fy;
  auto hash = [&](int i, int j) -> uint8_t { return perm[(perm[i & 255] + j) & 255]; };
  const double n00 = grad(hash(xi, yi), dx, dy);
  const double n10 = grad(hash(xi + 1, yi), dx - 1, dy);
  const double n01 = grad(hash(xi, yi + 1), dx, dy - 1);
  const double n11 = grad(hash(xi + 1, yi + 1), dx - 1, dy - 1);
  const double u = fade(dx), v = fade(dy);
  return lerp(lerp(n00, n10, u), lerp(n01, n11, u), v);
}

AlphaMap gen_perlin(const AlphaGenSpec& spec, int height, int width) {
  GBS_CHECK(spec.scheme == Scheme::kPerlin, kParameter, "gen_perlin: scheme is not perlin");
  check_dims(height, width, 2);
  const auto& p = spec.perlin;
  GBS_CHECK(p.base_frequency > 0.0, kParameter, "perlin: frequency must be positive");
  GBS_CHECK(p.octaves >= 1, kParameter, "perlin: octave count must be >= 1");
  GBS_CHECK(p.persistence > 0.0, kParameter, "perlin: persistence must be positive");

  AlphaMap alpha(height, width);
  const double short_side = std::min(height, width);
  double amplitude = 1.0, total_amplitude = 0.0, frequency = p.base_frequency;
  for (int o = 0; o < p.octaves; ++o) {
    const auto perm = perlin_permutation(spec.seed, o);
    const double step = frequency / short_side;
    for (int r = 0; r < height; ++r)
      for (int c = 0; c < width; ++c) alpha(r, c) += amplitude * perlin_noise(perm, c * step, r * step);
    total_amplitude += amplitude;
    amplitude *= p.persistence;
    frequency *= 2.0;
  }
  for (auto& v : alpha.values()) v = std::clamp(0.5 * (v / total_amplitude + 1.0), 0.0, 1.0);
  return alpha;
}

AlphaMap gaussian_pair_map(int height, int width, const GaussianPair& g) {
  check_dims(height, width, 1);
  GBS_CHECK(g.sigma1 > 0.0 && g.sigma2 > 0.0, kParameter, "gaussian pair: sigma must be positive");
  AlphaMap alpha(height, width);
  const double log_norm1 = std::log(2.0 * std::numbers::pi * g.sigma1 * g.sigma1);
  const double log_norm2 = std::log(2.0 * std::numbers::pi * g.sigma2 * g.sigma2);
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      const double d1 = (r - g.mu1_row) * (r - g.mu1_row) + (c - g.mu1_col) * (c - g.mu1_col);
      const double d2 = (r - g.mu2_row) * (r - g.mu2_row) + (c - g.mu2_col) * (c - g.mu2_col);
      const double l1 = -d1 / (2 * g.sigma1 * g.sigma1) - log_norm1;
      const double l2 = -d2 / (2 * g.sigma2 * g.sigma2) - log_norm2;
      // G1 / (G1 + G2) = 1 / (1 + exp(l2 - l1))
      alpha(r, c) = 1.0 / (1.0 + std::exp(l2 - l1));
    }
  }
  return alpha;
}

GaussianPair sample_gaussian_pair(const AlphaGenSpec& spec, int height, int width) {
  const auto& p = spec.gaussian;
  GBS_CHECK(p.sigma_min > 0.0 && p.sigma_max >= p.sigma_min, kParameter,
            "gaussian pair: sigma range must be positive and ordered");
  Rng rng(spec.seed);
  const double short_side = std::min(height, width);
  GaussianPair g{};
  g.mu1_row = rng.uniform(0.0, height);
  g.mu1_col = rng.uniform(0.0, width);
  g.sigma1 = rng.uniform(p.sigma_min, p.sigma_max) * short_side;
  g.mu2_row = rng.uniform(0.0, height);
  g.mu2_col = rng.uniform(0.0, width);
  g.sigma2 = rng.uniform(p.sigma_min, p.sigma_max) * short_side;
  return g;
}

AlphaMap gen_gaussian_pair(const AlphaGenSpec& spec, int height, int width) {
  GBS_CHECK(spec.scheme == Scheme::kGaussianPair, kParameter,
            "gen_gaussian_pair: scheme is not gaussian_pair");
  check_dims(height, width, 1);
  return gaussian_pair_map(height, width, sample_gaussian_pair(spec, height, width));
}

AlphaMap circle_map(int height, int width, double center_row, double center_col, double radius) {
  check_dims(height, width, 1);
  GBS_CHECK(radius > 0.0, kParameter, "circle: radius must be positive");
  AlphaMap alpha(height, width);
  const double r2 = radius * radius;
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c) {
      const double d2 = (r - center_row) * (r - center_row) + (c - center_col) * (c - center_col);
      alpha(r, c) = d2 <= r2 ? 1.0 : 0.0;
    }
  return alpha;
}

AlphaMap gen_circle(const AlphaGenSpec& spec, int height, int width) {
  GBS_CHECK(spec.scheme == Scheme::kCircle, kParameter, "gen_circle: scheme is not circle");
  check_dims(height, width, 1);
  const auto& p = spec.circle;
  GBS_CHECK(p.radius_min > 0.0 && p.radius_max > p.radius_min, kParameter,
            "circle: degenerate radius range");
  GBS_CHECK(p.center_max >= p.center_min, kParameter, "circle: center range is inverted");
  Rng rng(spec.seed);
  const double row = rng.uniform(p.center_min, p.center_max) * height;
  const double col = rng.uniform(p.center_min, p.center_max) * width;
  const double radius = rng.uniform(p.radius_min, p.radius_max) * std::min(height, width);
  return circle_map(height, width, row, col, radius);
}

Placement make_placement(double scale, double shift_x, double shift_y, int height, int width) {
  GBS_CHECK(scale > 0.0, kParameter, "scale_shift: scale must be positive");
  Placement p;
  p.scale = scale;
  p.shift_x = shift_x;
  p.shift_y = shift_y;
  p.top = static_cast<int>(std::lround(shift_y * height));
  p.left = static_cast<int>(std::lround(shift_x * width));
  p.rows = std::max(1, static_cast<int>(std::lround(scale * height)));
  p.cols = std::max(1, static_cast<int>(std::lround(scale * width)));
  return p;
}

namespace {

bool intersects_frame(const Placement& p, int height, int width) {
  return p.top < height && p.left < width && p.top + p.rows > 0 && p.left + p.cols > 0;
}

}  // namespace

Placement sample_placement(const AlphaGenSpec& spec, int height, int width) {
  const auto& p = spec.scale_shift;
  GBS_CHECK(p.scale_min > 0.0 && p.scale_max >= p.scale_min, kParameter,
            "scale_shift: scale range must be positive and ordered");
  GBS_CHECK(p.shift_max >= p.shift_min, kParameter, "scale_shift: shift range is inverted");
  Rng rng(spec.seed);
  for (int attempt = 0; attempt <= p.max_retries; ++attempt) {
    const double scale = rng.uniform(p.scale_min, p.scale_max);
    const double sx = rng.uniform(p.shift_min, p.shift_max);
    const double sy = rng.uniform(p.shift_min, p.shift_max);
    Placement placement = make_placement(scale, sx, sy, height, width);
    if (intersects_frame(placement, height, width)) return placement;
  }
  throw Error(ErrorKind::kParameter, "scale_shift: no in-frame placement within the retry bound");
}

AlphaMap placement_map(int height, int width, const Placement& placement) {
  AlphaMap alpha(height, width);
  const int r0 = std::max(placement.top, 0), r1 = std::min(placement.top + placement.rows, height);
  const int c0 = std::max(placement.left, 0), c1 = std::min(placement.left + placement.cols, width);
  for (int r = r0; r < r1; ++r)
    for (int c = c0; c < c1; ++c) alpha(r, c) = 1.0;
  return alpha;
}

AlphaMap gen_scale_shift(const AlphaGenSpec& spec, int height, int width) {
  GBS_CHECK(spec.scheme == Scheme::kScaleShift, kParameter, "gen_scale_shift: scheme is not scale_shift");
  check_dims(height, width, 1);
  return placement_map(height, width, sample_placement(spec, height, width));
}

AlphaSample generate(const AlphaGenSpec& spec, int height, int width) {
  AlphaSample sample;
  sample.scheme = spec.scheme;
  switch (spec.scheme) {
    case Scheme::kPerlin: sample.alpha = gen_perlin(spec, height, width); break;
    case Scheme::kGaussianPair: sample.alpha = gen_gaussian_pair(spec, height, width); break;
    case Scheme::kCircle: sample.alpha = gen_circle(spec, height, width); break;
    case Scheme::kScaleShift: {
      check_dims(height, width, 1);
      sample.placement = sample_placement(spec, height, width);
      sample.alpha = placement_map(height, width, *sample.placement);
      break;
    }
  }
  return sample;
}

BatchMixSpec BatchMixSpec::default_mix() {
  BatchMixSpec mix;
  mix.entries = {{Scheme::kPerlin, 0.5}, {Scheme::kGaussianPair, 0.5}};
  return mix;
}

std::vector<int> mix_counts(const BatchMixSpec& mix, int batch_size) {
  GBS_CHECK(batch_size >= 1, kParameter, "batch size must be >= 1");
  GBS_CHECK(!mix.entries.empty(), kParameter, "batch mix has no entries");
  double total = 0.0;
  for (const auto& e : mix.entries) {
    GBS_CHECK(e.fraction >= 0.0 && std::isfinite(e.fraction), kParameter,
              "batch mix fractions must be nonnegative");
    total += e.fraction;
  }
  GBS_CHECK(total > 0.0, kParameter, "batch mix fractions sum to zero");

  const std::size_t n = mix.entries.size();
  std::vector<int> counts(n);
  std::vector<double> remainders(n);
  int assigned = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double exact = mix.entries[i].fraction / total * batch_size;
    counts[i] = static_cast<int>(std::floor(exact));
    remainders[i] = exact - counts[i];
    assigned += counts[i];
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainders[a] > remainders[b]; });
  for (std::size_t k = 0; assigned < batch_size; ++k, ++assigned) ++counts[order[k % n]];
  return counts;
}

std::vector<AlphaSample> gen_batch_samples(const BatchMixSpec& mix, int batch_size, uint64_t seed,
                                           int height, int width) {
  const auto counts = mix_counts(mix, batch_size);
  std::vector<AlphaSample> out;
  out.reserve(batch_size);
  for (std::size_t e = 0; e < counts.size(); ++e) {
    for (int k = 0; k < counts[e]; ++k) {
      AlphaGenSpec spec = mix.params;
      spec.scheme = mix.entries[e].scheme;
      spec.seed = derive_seed(seed, out.size());
      out.push_back(generate(spec, height, width));
    }
  }
  return out;
}

std::vector<AlphaMap> gen_batch(const BatchMixSpec& mix, int batch_size, uint64_t seed, int height,
                                int width) {
  std::vector<AlphaMap> maps;
  for (auto& s : gen_batch_samples(mix, batch_size, seed, height, width)) maps.push_back(std::move(s.alpha));
  return maps;
}

}  // namespace gbs::alphagen
