#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gbs/grid.hpp"

// Procedural blending alpha maps.
namespace gbs::alphagen {

enum class Scheme { kPerlin, kGaussianPair, kCircle, kScaleShift };

std::string scheme_name(Scheme scheme);
Scheme parse_scheme(const std::string& name);

struct PerlinParams {
  double base_frequency = 4.0;  // lattice cells across the short image side
  int octaves = 3;
  double persistence = 0.5;
};

struct GaussianPairParams {
  // sigma ~ U[sigma_min, sigma_max] * min(height, width)
  double sigma_min = 0.1;
  double sigma_max = 0.5;
};

struct CircleParams {
  // center ~ U[center_min, center_max] * (height, width)
  double center_min = 0.25;
  double center_max = 0.75;
  // radius ~ U[radius_min, radius_max] * min(height, width)
  double radius_min = 0.15;
  double radius_max = 0.45;
};

struct ScaleShiftParams {
  double scale_min = 0.3;
  double scale_max = 0.8;
  double shift_min = -0.2;
  double shift_max = 0.9;
  int max_retries = 100;
};

struct AlphaGenSpec {
  Scheme scheme = Scheme::kPerlin;
  uint64_t seed = 0;
  PerlinParams perlin;
  GaussianPairParams gaussian;
  CircleParams circle;
  ScaleShiftParams scale_shift;
};

// Placement of the resized first image inside the second: rows
// [top, top + rows) and cols [left, left + cols), before clipping.
struct Placement {
  double scale = 1.0;
  double shift_x = 0.0;
  double shift_y = 0.0;
  int top = 0;
  int left = 0;
  int rows = 0;
  int cols = 0;
};

struct AlphaSample {
  Scheme scheme = Scheme::kPerlin;
  AlphaMap alpha;
  std::optional<Placement> placement;  // set for scale_shift only
};

AlphaMap gen_perlin(const AlphaGenSpec& spec, int height, int width);
AlphaMap gen_gaussian_pair(const AlphaGenSpec& spec, int height, int width);
AlphaMap gen_circle(const AlphaGenSpec& spec, int height, int width);
AlphaMap gen_scale_shift(const AlphaGenSpec& spec, int height, int width);

// Dispatch on spec.scheme.
AlphaSample generate(const AlphaGenSpec& spec, int height, int width);

// --- Deterministic building blocks (shared with the samplers above) ---

// 256-entry permutation for one Perlin octave, Fisher-Yates with Rng::below
// on derive_seed(seed, octave).
std::array<uint8_t, 256> perlin_permutation(uint64_t seed, int octave);

// Single-octave gradient noise in [-1, 1]; zero on integer lattice points.
double perlin_noise(const std::array<uint8_t, 256>& perm, double x, double y);

struct GaussianPair {
  double mu1_row, mu1_col, sigma1;
  double mu2_row, mu2_col, sigma2;
};
// alpha = G1 / (G1 + G2), isotropic normalized densities at pixel centers
// (row, col).
AlphaMap gaussian_pair_map(int height, int width, const GaussianPair& params);
GaussianPair sample_gaussian_pair(const AlphaGenSpec& spec, int height, int width);

// 1 where (row - center_row)^2 + (col - center_col)^2 <= radius^2.
AlphaMap circle_map(int height, int width, double center_row, double center_col, double radius);

Placement make_placement(double scale, double shift_x, double shift_y, int height, int width);
Placement sample_placement(const AlphaGenSpec& spec, int height, int width);
AlphaMap placement_map(int height, int width, const Placement& placement);

struct BatchMixEntry {
  Scheme scheme;
  double fraction;
};

struct BatchMixSpec {
  std::vector<BatchMixEntry> entries;
  AlphaGenSpec params;  // scheme-specific parameters; scheme and seed ignored

  static BatchMixSpec default_mix();  // half Perlin, half two-Gaussian
};

// Number of maps per entry: floor(f_i * n) plus one extra for the largest
// fractional remainders, earlier entries winning ties. Fractions are
// normalized by their sum first.
std::vector<int> mix_counts(const BatchMixSpec& mix, int batch_size);

// Maps grouped by entry in listing order; item i uses derive_seed(seed, i).
std::vector<AlphaSample> gen_batch_samples(const BatchMixSpec& mix, int batch_size, uint64_t seed,
                                           int height, int width);
std::vector<AlphaMap> gen_batch(const BatchMixSpec& mix, int batch_size, uint64_t seed, int height,
                                int width);

}  // namespace gbs::alphagen
