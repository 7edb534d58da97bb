#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>

#include "gbs/manifest.hpp"

// Synthetic colored-shapes datasets for desk-scale grounding runs.
namespace gbs::toy {

enum class Shape { kCircle, kSquare, kTriangle };

inline constexpr std::array<const char*, 3> kShapeNames{"circle", "square", "triangle"};

struct NamedColor {
  const char* name;
  double r, g, b;
};

inline constexpr std::array<NamedColor, 8> kColors{{
    {"red", 0.9, 0.1, 0.1},
    {"green", 0.1, 0.75, 0.1},
    {"blue", 0.1, 0.2, 0.95},
    {"yellow", 0.95, 0.9, 0.1},
    {"magenta", 0.9, 0.1, 0.9},
    {"cyan", 0.1, 0.9, 0.9},
    {"orange", 1.0, 0.55, 0.0},
    {"white", 1.0, 1.0, 1.0},
}};

inline constexpr double kBackground = 0.5;

struct ToyDatasetSpec {
  int image_size = 64;
  int shapes_min = 2;
  int shapes_max = 2;
  int shape_size_min = 14;  // bounding-box side in pixels
  int shape_size_max = 22;
  int num_shapes = 3;  // first k of kShapeNames
  int num_colors = 8;  // first k of kColors
  int sample_count = 100;
  int max_placement_retries = 200;
  uint64_t seed = 0;
  std::string name = "toy";  // manifest file stem and image prefix
};

// Writes <out_dir>/<name>.jsonl and <out_dir>/<name>/<id>.png. Every record
// carries its per-shape phrases and tight boxes. Returns the manifest path.
std::filesystem::path generate_toy_dataset(const ToyDatasetSpec& spec, const std::filesystem::path& out_dir);

struct RenderedShape {
  Shape shape;
  int color;
  eval::Box box;
};

// Draws one shape whose bounding square is [left, left + size) x
// [top, top + size); returns the tight box of the painted pixels.
eval::Box draw_shape(Image& image, Shape shape, const NamedColor& color, int top, int left, int size);

}  // namespace gbs::toy
