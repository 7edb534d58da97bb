#include "gbs/toy.hpp"

#include <algorithm>
#include <climits>
#include <cmath>
#include <set>

#include "gbs/rng.hpp"

namespace gbs::toy {

namespace fs = std::filesystem;

namespace {

bool inside(Shape shape, double y, double x, double size) {
  // (y, x) relative to the bounding square, pixel centers at +0.5.
  switch (shape) {
    case Shape::kSquare:
      return true;
    case Shape::kCircle: {
      const double c = size / 2.0;
      return (y - c) * (y - c) + (x - c) * (x - c) <= c * c;
    }
    case Shape::kTriangle: {
      // Apex at top center, base along the bottom edge.
      const double half_width = 0.5 * size * (y / size);
      return std::abs(x - size / 2.0) <= half_width;
    }
  }
  return false;
}

bool overlaps(const eval::Box& a, const eval::Box& b, int margin) {
  return a.x_min < b.x_max + margin && b.x_min < a.x_max + margin && a.y_min < b.y_max + margin &&
         b.y_min < a.y_max + margin;
}

}  // namespace

eval::Box draw_shape(Image& image, Shape shape, const NamedColor& color, int top, int left, int size) {
  eval::Box box{INT_MAX, INT_MAX, INT_MIN, INT_MIN};
  const double rgb[3] = {color.r, color.g, color.b};
  for (int dy = 0; dy < size; ++dy) {
    for (int dx = 0; dx < size; ++dx) {
      if (!inside(shape, dy + 0.5, dx + 0.5, size)) continue;
      const int r = top + dy, c = left + dx;
      if (r < 0 || r >= image.height() || c < 0 || c >= image.width()) continue;
      for (int ch = 0; ch < 3; ++ch) image.at(ch, r, c) = rgb[ch];
      box.x_min = std::min(box.x_min, c);
      box.y_min = std::min(box.y_min, r);
      box.x_max = std::max(box.x_max, c + 1);
      box.y_max = std::max(box.y_max, r + 1);
    }
  }
  GBS_CHECK(box.x_min < box.x_max, kParameter, "draw_shape: nothing was drawn");
  return box;
}

fs::path generate_toy_dataset(const ToyDatasetSpec& spec, const fs::path& out_dir) {
  GBS_CHECK(spec.num_shapes >= 1 && spec.num_shapes <= static_cast<int>(kShapeNames.size()), kParameter,
            "toy: shape vocabulary size out of range");
  GBS_CHECK(spec.num_colors >= 1 && spec.num_colors <= static_cast<int>(kColors.size()), kParameter,
            "toy: color vocabulary size out of range");
  GBS_CHECK(spec.num_shapes * spec.num_colors >= 2, kParameter,
            "toy: need at least 2 distinct (color, shape) combinations");
  GBS_CHECK(spec.shapes_min >= 1 && spec.shapes_max >= spec.shapes_min, kParameter,
            "toy: invalid shapes-per-image range");
  GBS_CHECK(spec.shapes_max <= spec.num_shapes * spec.num_colors, kParameter,
            "toy: more shapes per image than distinct combinations");
  GBS_CHECK(spec.shape_size_min >= 3 && spec.shape_size_max >= spec.shape_size_min &&
                spec.shape_size_max <= spec.image_size,
            kParameter, "toy: invalid shape size range");
  GBS_CHECK(spec.sample_count >= 1, kParameter, "toy: sample count must be positive");

  std::error_code ec;
  fs::create_directories(out_dir / spec.name, ec);
  GBS_CHECK(!ec, kIo, "cannot create " + (out_dir / spec.name).string());

  std::vector<manifest::Record> records;
  for (int i = 0; i < spec.sample_count; ++i) {
    Rng rng(derive_seed(spec.seed, static_cast<uint64_t>(i)));
    Image image(spec.image_size, spec.image_size, kBackground);
    const int count = spec.shapes_min + static_cast<int>(rng.below(spec.shapes_max - spec.shapes_min + 1));

    std::vector<RenderedShape> placed;
    std::set<std::pair<int, int>> used;
    for (int k = 0; k < count; ++k) {
      std::pair<int, int> combo;
      do {
        combo = {static_cast<int>(rng.below(spec.num_colors)), static_cast<int>(rng.below(spec.num_shapes))};
      } while (used.count(combo));
      used.insert(combo);

      bool ok = false;
      for (int attempt = 0; attempt < spec.max_placement_retries && !ok; ++attempt) {
        const int size =
            spec.shape_size_min + static_cast<int>(rng.below(spec.shape_size_max - spec.shape_size_min + 1));
        const int top = static_cast<int>(rng.below(spec.image_size - size + 1));
        const int left = static_cast<int>(rng.below(spec.image_size - size + 1));
        const eval::Box square{left, top, left + size, top + size};
        ok = std::none_of(placed.begin(), placed.end(),
                          [&](const RenderedShape& s) { return overlaps(square, s.box, 1); });
        if (ok) {
          const auto shape = static_cast<Shape>(combo.second);
          eval::Box box = draw_shape(image, shape, kColors[combo.first], top, left, size);
          placed.push_back({shape, combo.first, box});
        }
      }
      GBS_CHECK(ok, kParameter, "toy: could not place shape " + std::to_string(k) + " of image " +
                                    std::to_string(i) + " within the retry bound");
    }

    manifest::Record r;
    r.id = spec.name + "_" + std::to_string(i);
    r.image = spec.name + "/" + r.id + ".png";
    for (const auto& s : placed) {
      const std::string phrase =
          std::string(kColors[s.color].name) + " " + kShapeNames[static_cast<int>(s.shape)];
      r.caption += (r.caption.empty() ? "" : " ") + phrase;
      r.phrases.push_back({phrase, {s.box}});
    }
    write_image(out_dir / r.image, image);
    records.push_back(std::move(r));
  }

  const fs::path manifest_path = out_dir / (spec.name + ".jsonl");
  manifest::write(manifest_path, records);
  return manifest_path;
}

}  // namespace gbs::toy
